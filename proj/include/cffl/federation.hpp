#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "cffl/estimator.hpp"

namespace cffl::federation {

using estimator::TrainBatch;
using nn::Gradient;
using nn::LayeredModel;

enum class Strategy { plain, dis, rsrp_dis };

inline std::string to_string(Strategy s) {
    switch (s) {
        case Strategy::plain: return "plain";
        case Strategy::dis: return "dis";
        default: return "rsrp_dis";
    }
}

inline Strategy strategy_from_string(const std::string& s) {
    if (s == "plain") return Strategy::plain;
    if (s == "dis") return Strategy::dis;
    if (s == "rsrp_dis") return Strategy::rsrp_dis;
    throw std::invalid_argument("unknown FL strategy: " + s);
}

struct FLGroup {
    std::vector<int> member_ids;
    int center_id = -1;
};

struct TransferContext {
    std::map<int, double> distances;  // L_m per member
    double reference_distance = 1.0;  // L
    std::map<int, double> powers;     // P_m per member
    double center_power = 0.0;        // P_center
    double power_band = 1.0;          // Delta
};

// Distance-similarity weight: 1 - L_m/L on [0, L], 0 beyond.
inline double dis_weight(double l_m, double l_ref) {
    if (!(l_ref > 0.0)) throw std::invalid_argument("dis_weight: reference distance must be > 0");
    if (l_m < 0.0) throw std::invalid_argument("dis_weight: negative distance");
    return l_m <= l_ref ? 1.0 - l_m / l_ref : 0.0;
}

// RSRP+distance weight: scales alpha' inside the strict power window, 0 outside.
inline double rsrp_dis_weight(double p_m, double p_center, double delta, double alpha_prime) {
    if (!(delta > 0.0)) throw std::invalid_argument("rsrp_dis_weight: delta must be > 0");
    if (p_m > p_center - delta && p_m < p_center + delta)
        return (1.0 - std::abs(p_m - p_center) / (2.0 * delta)) * alpha_prime;
    return 0.0;
}

// Every member weight is zero; the round cannot aggregate.
struct DegenerateWeightsError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// r_t = sum (alpha_m / sum alpha_i) g_m
inline Gradient aggregate_gradients(const std::map<int, Gradient>& grads,
                                    const std::map<int, double>& alpha) {
    if (grads.empty()) throw std::invalid_argument("aggregate_gradients: no members");
    double total = 0.0;
    for (const auto& [id, g] : grads) {
        const auto it = alpha.find(id);
        if (it == alpha.end()) throw std::invalid_argument("aggregate_gradients: missing weight");
        if (it->second < 0.0) throw std::invalid_argument("aggregate_gradients: negative weight");
        total += it->second;
    }
    if (total <= 0.0) throw DegenerateWeightsError("aggregate_gradients: all weights zero");
    Gradient out;
    bool first = true;
    for (const auto& [id, g] : grads) {
        const double w = alpha.at(id) / total;
        if (first) {
            out = g;
            out.scale(w);
            first = false;
        } else {
            if (out.layers.size() != g.layers.size())
                throw std::invalid_argument("aggregate_gradients: shape mismatch");
            out.add_scaled(g, w);
        }
    }
    return out;
}

inline void global_update(LayeredModel& model, const Gradient& r_t, double lr) {
    nn::sgd_step(model, r_t, lr);
}

// Mean received-symbol power over a batch's input feature maps, used as RSRP.
inline double mean_rsrp(const TrainBatch& batch) {
    if (batch.size() == 0) return 0.0;
    double acc = 0.0;
    std::size_t n = 0;
    for (const auto& x : batch.inputs) {
        for (double v : x) acc += v * v;
        n += x.size() / 2;  // re/im pairs -> symbols
    }
    return acc / static_cast<double>(n);
}

inline std::map<int, double> strategy_weights(Strategy strategy, const std::vector<int>& members,
                                              const TransferContext& ctx) {
    std::map<int, double> alpha;
    for (int m : members) {
        switch (strategy) {
            case Strategy::plain:
                alpha[m] = 1.0;
                break;
            case Strategy::dis:
                alpha[m] = dis_weight(ctx.distances.at(m), ctx.reference_distance);
                break;
            case Strategy::rsrp_dis: {
                const double ap = dis_weight(ctx.distances.at(m), ctx.reference_distance);
                alpha[m] = rsrp_dis_weight(ctx.powers.at(m), ctx.center_power, ctx.power_band, ap);
                break;
            }
        }
    }
    return alpha;
}

// Pick the member with the maximum distance weight as the aggregating node.
inline int select_center(const std::vector<int>& members, const TransferContext& ctx) {
    if (members.empty()) throw std::invalid_argument("select_center: empty group");
    int best = members.front();
    double best_w = -1.0;
    for (int m : members) {
        const double w = dis_weight(ctx.distances.at(m), ctx.reference_distance);
        if (w > best_w) {
            best_w = w;
            best = m;
        }
    }
    return best;
}

struct RoundReport {
    Strategy strategy = Strategy::plain;
    std::map<int, double> member_nmse_linear;
    std::map<int, double> weights;
    std::size_t model_transfers = 0;    // broadcasts + uploads
    std::size_t params_exchanged = 0;   // transfers * model parameter count
    std::size_t bytes_exchanged = 0;    // 8 bytes per parameter
    int local_steps = 1;
};

struct RoundOptions {
    int local_steps = 1;  // gradient steps per member before aggregation
    double learning_rate = 1e-3;
};

// One FL round: broadcast, local gradients at the broadcast parameters,
// weighted aggregation, global update.
inline RoundReport run_fl_round(const FLGroup& group, LayeredModel& global_model,
                                const std::map<int, TrainBatch>& datasets, Strategy strategy,
                                const TransferContext& ctx, const RoundOptions& opt = {}) {
    if (group.member_ids.empty()) throw std::invalid_argument("run_fl_round: empty group");
    for (int m : group.member_ids)
        if (datasets.find(m) == datasets.end() || datasets.at(m).size() == 0)
            throw std::invalid_argument("run_fl_round: member " + std::to_string(m) +
                                        " has no data");

    const std::map<int, double> alpha = strategy_weights(strategy, group.member_ids, ctx);

    RoundReport report;
    report.strategy = strategy;
    report.weights = alpha;
    report.local_steps = opt.local_steps;

    for (int step = 0; step < opt.local_steps; ++step) {
        std::map<int, Gradient> grads;
        for (int m : group.member_ids) grads.emplace(m, estimator::backward(global_model, datasets.at(m)));
        const Gradient r_t = aggregate_gradients(grads, alpha);  // throws on all-zero weights
        global_update(global_model, r_t, opt.learning_rate);
    }

    for (int m : group.member_ids)
        report.member_nmse_linear[m] = estimator::mean_nmse_linear(global_model, datasets.at(m));

    report.model_transfers = 2 * group.member_ids.size();
    report.params_exchanged = report.model_transfers * global_model.param_count();
    report.bytes_exchanged = report.params_exchanged * sizeof(double);
    return report;
}

}  // namespace cffl::federation

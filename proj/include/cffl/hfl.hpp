#pragma once

#include <limits>
#include <map>
#include <stdexcept>
#include <vector>

#include "cffl/estimator.hpp"

namespace cffl::hfl {

using estimator::TrainBatch;
using nn::Gradient;
using nn::Layer;
using nn::LayeredModel;

inline bool same_structure(const Layer& a, const Layer& b) {
    return a.kind == b.kind && a.activation == b.activation && a.in_dim == b.in_dim &&
           a.out_dim == b.out_dim && a.in_ch == b.in_ch && a.out_ch == b.out_ch &&
           a.kernel == b.kernel && a.length == b.length;
}

inline bool shared_parts_congruent(const LayeredModel& a, const LayeredModel& b) {
    if (a.shared_split != b.shared_split) return false;
    if (a.shared_split > a.layers.size() || b.shared_split > b.layers.size()) return false;
    for (std::size_t i = 0; i < a.shared_split; ++i)
        if (!same_structure(a.layers[i], b.layers[i])) return false;
    return true;
}

struct HflPair {
    LayeredModel global_model;    // W_g = W_g^1 + W_g^2
    LayeredModel local_template;  // W_f = W_f^1 + W_f^2
    TrainBatch server_dataset;

    void validate() const {
        if (!shared_parts_congruent(global_model, local_template))
            throw std::invalid_argument("HflPair: shared parts are not congruent");
        if (global_model.layers.size() <= local_template.layers.size())
            throw std::invalid_argument("HflPair: global model must have more layers than local");
    }
};

// W_g^1 = (sum beta_l W_l^1) / L. Division by L as stated, independent of
// whether the betas sum to L.
inline std::vector<Layer> aggregate_shared(const std::vector<const LayeredModel*>& locals,
                                           const std::vector<double>& beta) {
    if (locals.empty()) throw std::invalid_argument("aggregate_shared: no local models");
    if (beta.size() != locals.size())
        throw std::invalid_argument("aggregate_shared: beta count mismatch");
    const std::size_t split = locals.front()->shared_split;
    for (const auto* m : locals)
        if (!shared_parts_congruent(*m, *locals.front()))
            throw std::invalid_argument("aggregate_shared: shape mismatch");

    std::vector<Layer> out(locals.front()->layers.begin(), locals.front()->layers.begin() + split);
    const double inv_l = 1.0 / static_cast<double>(locals.size());
    for (std::size_t i = 0; i < split; ++i) {
        std::fill(out[i].weights.begin(), out[i].weights.end(), 0.0);
        std::fill(out[i].bias.begin(), out[i].bias.end(), 0.0);
        for (std::size_t l = 0; l < locals.size(); ++l) {
            const Layer& src = locals[l]->layers[i];
            for (std::size_t j = 0; j < src.weights.size(); ++j)
                out[i].weights[j] += beta[l] * src.weights[j];
            for (std::size_t j = 0; j < src.bias.size(); ++j) out[i].bias[j] += beta[l] * src.bias[j];
        }
        for (auto& w : out[i].weights) w *= inv_l;
        for (auto& b : out[i].bias) b *= inv_l;
    }
    return out;
}

inline void set_shared_part(LayeredModel& model, const std::vector<Layer>& shared) {
    if (shared.size() != model.shared_split)
        throw std::invalid_argument("set_shared_part: layer count mismatch");
    for (std::size_t i = 0; i < shared.size(); ++i) {
        if (!same_structure(shared[i], model.layers[i]))
            throw std::invalid_argument("set_shared_part: structure mismatch");
        model.layers[i].weights = shared[i].weights;
        model.layers[i].bias = shared[i].bias;
        model.layers[i].running_mean = shared[i].running_mean;
        model.layers[i].running_var = shared[i].running_var;
    }
}

struct DistillOptions {
    int max_epochs = 200;
    double learning_rate = 1e-3;
    int batch_size = 64;
    double convergence_rel_improvement = 1e-5;
    int convergence_window = 10;
};

namespace detail {

// Mini-batch SGD on `targets` updating only layers [first_layer, end).
inline void train_suffix(LayeredModel& model, const std::vector<std::vector<double>>& inputs,
                         const std::vector<std::vector<double>>& targets, std::size_t first_layer,
                         const DistillOptions& opt) {
    const std::size_t n = inputs.size();
    const std::size_t bsz = static_cast<std::size_t>(opt.batch_size);
    double prev_loss = std::numeric_limits<double>::infinity();
    int stall = 0;
    for (int e = 0; e < opt.max_epochs; ++e) {
        double epoch_loss = 0.0;
        for (std::size_t off = 0; off < n; off += bsz) {
            const std::size_t m = std::min(bsz, n - off);
            Gradient grad = Gradient::zeros_like(model);
            nn::ForwardCache cache;
            for (std::size_t i = off; i < off + m; ++i) {
                const auto est = nn::forward_cached(model, inputs[i], cache);
                std::vector<double> dout(est.size());
                double loss = 0.0;
                for (std::size_t j = 0; j < est.size(); ++j) {
                    const double d = est[j] - targets[i][j];
                    dout[j] = 2.0 * d / static_cast<double>(m);
                    loss += d * d;
                }
                epoch_loss += loss;
                nn::backward_from_output(model, cache, std::move(dout), grad);
            }
            nn::sgd_step_range(model, grad, opt.learning_rate, first_layer, model.layers.size());
        }
        epoch_loss /= static_cast<double>(n);
        if (prev_loss - epoch_loss < opt.convergence_rel_improvement * std::max(prev_loss, 1e-300))
            ++stall;
        else
            stall = 0;
        if (stall >= opt.convergence_window) break;
        prev_loss = epoch_loss;
    }
}

}  // namespace detail

// Step 4: train only the distillation part W_g^2 on the server dataset.
inline void train_distill_global(LayeredModel& global_model, const TrainBatch& server_dataset,
                                 const DistillOptions& opt = {}) {
    if (server_dataset.size() == 0)
        throw std::invalid_argument("train_distill_global: empty server dataset");
    detail::train_suffix(global_model, server_dataset.inputs, server_dataset.targets,
                         global_model.shared_split, opt);
}

enum class DistillTarget { teacher_outputs, true_labels };

// Step 5: W_f^1 is copied from W_g^1 and frozen, W_f^2 is re-initialized and
// trained on the server inputs against either the teacher's outputs or the
// true labels.
inline LayeredModel distill_to_local(const LayeredModel& global_model,
                                     const LayeredModel& local_template,
                                     const TrainBatch& server_dataset, Rng& rng,
                                     DistillTarget target = DistillTarget::teacher_outputs,
                                     const DistillOptions& opt = {}) {
    if (!shared_parts_congruent(global_model, local_template))
        throw std::invalid_argument("distill_to_local: structure mismatch");
    LayeredModel local = local_template;
    nn::xavier_init(local, rng);  // fresh W_f^2 (and a throwaway prefix init)
    for (std::size_t i = 0; i < local.shared_split; ++i) local.layers[i] = global_model.layers[i];

    if (opt.max_epochs <= 0 || server_dataset.size() == 0) return local;

    std::vector<std::vector<double>> targets;
    if (target == DistillTarget::teacher_outputs) {
        targets.reserve(server_dataset.size());
        for (const auto& x : server_dataset.inputs) targets.push_back(nn::forward(global_model, x));
    } else {
        targets = server_dataset.targets;
    }
    detail::train_suffix(local, server_dataset.inputs, targets, local.shared_split, opt);
    return local;
}

struct HflRoundReport {
    std::size_t uplink_params = 0;    // members * size(W^1)
    std::size_t downlink_params = 0;  // members * size(W_f), two broadcasts folded into one report row
    std::map<int, double> member_nmse_linear;
};

struct HflRoundOptions {
    estimator::LocalTrainOptions local;
    DistillOptions distill;
    DistillTarget target = DistillTarget::teacher_outputs;
};

// One six-step HFL round: broadcast W_f, full local updates, shared-part
// uplink, Eq.-style aggregation, server-side distillation-part training, and
// global-to-local distillation.
inline HflRoundReport run_hfl_round(HflPair& pair, const std::vector<int>& members,
                                    const std::map<int, TrainBatch>& datasets,
                                    const std::vector<double>& beta, Rng& rng,
                                    const HflRoundOptions& opt = {}) {
    pair.validate();
    if (members.empty()) throw std::invalid_argument("run_hfl_round: no members");
    if (beta.size() != members.size())
        throw std::invalid_argument("run_hfl_round: beta count mismatch");

    // Steps 1-2: broadcast W_f, members update the full model independently.
    std::vector<LayeredModel> locals;
    locals.reserve(members.size());
    for (int m : members) {
        LayeredModel w_l = pair.local_template;
        estimator::local_train(w_l, datasets.at(m), {}, opt.local);
        locals.push_back(std::move(w_l));
    }

    // Step 3: only the shared parts travel uplink.
    std::vector<const LayeredModel*> shared_sources;
    for (const auto& l : locals) shared_sources.push_back(&l);
    set_shared_part(pair.global_model, aggregate_shared(shared_sources, beta));

    // Step 4: distillation-part training of the global model.
    train_distill_global(pair.global_model, pair.server_dataset, opt.distill);

    // Step 5: distill the global model back into the local shape.
    pair.local_template = distill_to_local(pair.global_model, pair.local_template,
                                           pair.server_dataset, rng, opt.target, opt.distill);

    HflRoundReport report;
    report.uplink_params = members.size() * pair.local_template.shared_param_count();
    report.downlink_params = members.size() * pair.local_template.param_count();
    for (std::size_t i = 0; i < members.size(); ++i)
        report.member_nmse_linear[members[i]] =
            estimator::mean_nmse_linear(pair.local_template, datasets.at(members[i]));
    return report;
}

}  // namespace cffl::hfl

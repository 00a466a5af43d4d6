#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "cffl/nn.hpp"

namespace cffl::metrics {

// Normalized absolute inner product of the vectorized channels, in [0,1].
inline double channel_correlation(const Eigen::MatrixXcd& h_i, const Eigen::MatrixXcd& h_j) {
    if (h_i.rows() != h_j.rows() || h_i.cols() != h_j.cols())
        throw std::invalid_argument("channel_correlation: shape mismatch");
    const double ni = h_i.norm();
    const double nj = h_j.norm();
    if (ni == 0.0 || nj == 0.0)
        throw std::invalid_argument("channel_correlation: zero-norm input");
    std::complex<double> inner{0.0, 0.0};
    for (int r = 0; r < h_i.rows(); ++r)
        for (int c = 0; c < h_i.cols(); ++c) inner += std::conj(h_i(r, c)) * h_j(r, c);
    return std::min(1.0, std::abs(inner) / (ni * nj));
}

enum class OverheadAlgo { dqn_fl, dqn_hfl, qmix_fl, qmix_hfl };

inline std::string to_string(OverheadAlgo a) {
    switch (a) {
        case OverheadAlgo::dqn_fl: return "dqn_fl";
        case OverheadAlgo::dqn_hfl: return "dqn_hfl";
        case OverheadAlgo::qmix_fl: return "qmix_fl";
        default: return "qmix_hfl";
    }
}

struct OverheadInputs {
    std::uint64_t users = 10;            // K
    std::uint64_t w_fl = 0;              // FL model parameter count
    std::uint64_t w_hfl = 0;             // HFL (shared-part) parameter count
    std::uint64_t rounds_per_epoch = 5;  // E
    std::uint64_t epochs = 1;            // T
    std::uint64_t observation = 0;       // O
    std::uint64_t action = 0;            // A (DQN; Qmix uses C_max+1)
    std::uint64_t policy = 0;            // P (DQN; Qmix uses C_max+1)
    std::uint64_t max_coalitions = 3;    // C_max
};

struct Overhead {
    std::uint64_t per_round = 0;
    std::uint64_t per_epoch = 0;
    std::uint64_t total = 0;
};

inline Overhead comm_overhead(OverheadAlgo algo, const OverheadInputs& in) {
    const bool hfl = algo == OverheadAlgo::dqn_hfl || algo == OverheadAlgo::qmix_hfl;
    const bool qmix = algo == OverheadAlgo::qmix_fl || algo == OverheadAlgo::qmix_hfl;
    const std::uint64_t w = hfl ? in.w_hfl : in.w_fl;
    const std::uint64_t a = qmix ? in.max_coalitions + 1 : in.action;
    const std::uint64_t p = qmix ? in.max_coalitions + 1 : in.policy;

    Overhead out;
    out.per_round = 2 * in.users * w;
    out.per_epoch = in.rounds_per_epoch * out.per_round + in.users * ((in.observation + a) + p);
    out.total = in.epochs * out.per_epoch;
    return out;
}

// Flop convention: 2 flops per multiply-accumulate.
struct Accounting {
    std::uint64_t params = 0;
    std::uint64_t flops_per_forward = 0;
};

inline Accounting layer_accounting(const nn::Layer& l) {
    Accounting a;
    a.params = l.param_count();
    switch (l.kind) {
        case nn::LayerKind::dense:
            a.flops_per_forward = 2ULL * l.in_dim * l.out_dim + l.out_dim;
            break;
        case nn::LayerKind::conv1d:
            a.flops_per_forward =
                2ULL * l.in_ch * l.out_ch * l.kernel * l.length + static_cast<std::uint64_t>(l.out_ch) * l.length;
            break;
        case nn::LayerKind::batch_norm:
            a.flops_per_forward = 2ULL * l.in_ch * l.length;
            break;
    }
    return a;
}

inline Accounting model_accounting(const nn::LayeredModel& model) {
    Accounting total;
    for (const auto& l : model.layers) {
        const Accounting a = layer_accounting(l);
        total.params += a.params;
        total.flops_per_forward += a.flops_per_forward;
    }
    return total;
}

// Relative total-flops improvement of HFL over FL, as a fraction.
inline double flops_improvement(double fl_total_flops, double hfl_total_flops) {
    if (!(fl_total_flops > 0.0)) throw std::invalid_argument("flops_improvement: FL flops must be > 0");
    return (fl_total_flops - hfl_total_flops) / fl_total_flops;
}

}  // namespace cffl::metrics

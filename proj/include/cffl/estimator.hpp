#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "cffl/channel.hpp"
#include "cffl/nn.hpp"

namespace cffl::estimator {

using nn::Gradient;
using nn::LayeredModel;

// Real-valued training batch: one row per sample. Inputs are the received
// pilots as two feature maps (real, imaginary), targets the flattened
// real/imaginary split of the cascaded channel.
struct TrainBatch {
    std::vector<std::vector<double>> inputs;
    std::vector<std::vector<double>> targets;

    std::size_t size() const { return inputs.size(); }
};

inline std::vector<double> sample_input(const channel::PilotSample& s) {
    const int t = static_cast<int>(s.received.size());
    std::vector<double> x(2 * static_cast<std::size_t>(t));
    for (int i = 0; i < t; ++i) {
        x[i] = s.received(i).real();
        x[t + i] = s.received(i).imag();
    }
    return x;
}

inline std::vector<double> sample_target(const channel::PilotSample& s) {
    const auto& h = s.truth.matrix;
    const std::size_t n = static_cast<std::size_t>(h.rows()) * h.cols();
    std::vector<double> y(2 * n);
    std::size_t idx = 0;
    for (int r = 0; r < h.rows(); ++r)
        for (int c = 0; c < h.cols(); ++c, ++idx) {
            y[idx] = h(r, c).real();
            y[n + idx] = h(r, c).imag();
        }
    return y;
}

inline TrainBatch to_batch(const channel::PilotDataset& ds, std::size_t first = 0,
                           std::size_t count = static_cast<std::size_t>(-1)) {
    TrainBatch b;
    const std::size_t last = std::min(ds.samples.size(), count == static_cast<std::size_t>(-1)
                                                             ? ds.samples.size()
                                                             : first + count);
    for (std::size_t i = first; i < last; ++i) {
        b.inputs.push_back(sample_input(ds.samples[i]));
        b.targets.push_back(sample_target(ds.samples[i]));
    }
    return b;
}

inline std::vector<double> forward(const LayeredModel& model, const std::vector<double>& input) {
    return nn::forward(model, input);
}

// (1/|batch|) * sum ||f(y) - h||^2
inline double mse_loss(const LayeredModel& model, const TrainBatch& batch) {
    if (batch.size() == 0) throw std::invalid_argument("mse_loss: empty batch");
    double acc = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto est = nn::forward(model, batch.inputs[i]);
        for (std::size_t j = 0; j < est.size(); ++j) {
            const double d = est[j] - batch.targets[i][j];
            acc += d * d;
        }
    }
    return acc / static_cast<double>(batch.size());
}

// Exact gradient of mse_loss at the current parameters.
inline Gradient backward(const LayeredModel& model, const TrainBatch& batch) {
    if (batch.size() == 0) throw std::invalid_argument("backward: empty batch");
    Gradient grad = Gradient::zeros_like(model);
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    nn::ForwardCache cache;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto est = nn::forward_cached(model, batch.inputs[i], cache);
        std::vector<double> dout(est.size());
        for (std::size_t j = 0; j < est.size(); ++j)
            dout[j] = 2.0 * inv_n * (est[j] - batch.targets[i][j]);
        nn::backward_from_output(model, cache, std::move(dout), grad);
    }
    return grad;
}

inline void sgd_step(LayeredModel& model, const Gradient& grad, double lr) {
    nn::sgd_step(model, grad, lr);
}

// A neighbor whose dataset is below the a*D_k contribution floor.
struct NeighborContributionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct LocalTrainOptions {
    int epochs = 1;
    double learning_rate = 1e-3;
    int batch_size = 64;
    double contribution_floor = 0.1;  // a in D_z >= a * D_k
};

// Mini-batch SGD on the summed objective: mean own loss plus one mean loss
// term per neighbor. Batches cycle through each dataset in order, so the
// trajectory is deterministic.
inline void local_train(LayeredModel& model, const TrainBatch& own,
                        const std::vector<const TrainBatch*>& neighbors,
                        const LocalTrainOptions& opt) {
    if (own.size() == 0) throw std::invalid_argument("local_train: empty own dataset");
    for (const auto* nb : neighbors)
        if (nb->size() < opt.contribution_floor * static_cast<double>(own.size()))
            throw NeighborContributionError(
                "local_train: neighbor dataset below the contribution floor");

    std::vector<std::size_t> cursors(neighbors.size(), 0);
    const std::size_t bsz = static_cast<std::size_t>(opt.batch_size);
    for (int e = 0; e < opt.epochs; ++e) {
        for (std::size_t off = 0; off < own.size(); off += bsz) {
            const std::size_t n = std::min(bsz, own.size() - off);
            TrainBatch step;
            for (std::size_t i = 0; i < n; ++i) {
                step.inputs.push_back(own.inputs[off + i]);
                step.targets.push_back(own.targets[off + i]);
            }
            Gradient grad = backward(model, step);
            for (std::size_t z = 0; z < neighbors.size(); ++z) {
                const TrainBatch& nb = *neighbors[z];
                TrainBatch nstep;
                for (std::size_t i = 0; i < n; ++i) {
                    const std::size_t idx = (cursors[z] + i) % nb.size();
                    nstep.inputs.push_back(nb.inputs[idx]);
                    nstep.targets.push_back(nb.targets[idx]);
                }
                cursors[z] = (cursors[z] + n) % nb.size();
                grad.add_scaled(backward(model, nstep), 1.0);
            }
            nn::sgd_step(model, grad, opt.learning_rate);
        }
    }
}

inline constexpr double kNmseFloorDb = -300.0;

// 10*log10(||est - truth||^2 / ||truth||^2)
inline double nmse_db(const std::vector<double>& estimate, const std::vector<double>& truth) {
    if (estimate.size() != truth.size()) throw std::invalid_argument("nmse: size mismatch");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const double d = estimate[i] - truth[i];
        num += d * d;
        den += truth[i] * truth[i];
    }
    if (den == 0.0) throw std::invalid_argument("nmse: zero-norm truth");
    if (num == 0.0) return kNmseFloorDb;
    return std::max(kNmseFloorDb, 10.0 * std::log10(num / den));
}

inline double nmse_linear(const std::vector<double>& estimate, const std::vector<double>& truth) {
    if (estimate.size() != truth.size()) throw std::invalid_argument("nmse: size mismatch");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const double d = estimate[i] - truth[i];
        num += d * d;
        den += truth[i] * truth[i];
    }
    if (den == 0.0) throw std::invalid_argument("nmse: zero-norm truth");
    return num / den;
}

// Mean linear NMSE of a model over a batch.
inline double mean_nmse_linear(const LayeredModel& model, const TrainBatch& batch) {
    if (batch.size() == 0) throw std::invalid_argument("mean_nmse_linear: empty batch");
    double acc = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i)
        acc += nmse_linear(nn::forward(model, batch.inputs[i]), batch.targets[i]);
    return acc / static_cast<double>(batch.size());
}

struct EstimatorSpec {
    int channels = 16;
    int kernel = 3;
    int local_conv_blocks = 3;
    int global_conv_blocks = 5;
};

// conv blocks are conv1d + batch_norm(relu); the dense head maps the
// flattened feature maps to the 2*N*(N_t*B) output vector.
inline LayeredModel make_model(int pilot_length, int output_dim, int conv_blocks,
                               int shared_blocks, const EstimatorSpec& spec) {
    LayeredModel m;
    int in_ch = 2;
    for (int b = 0; b < conv_blocks; ++b) {
        m.layers.push_back(nn::Layer::conv1d(in_ch, spec.channels, spec.kernel, pilot_length));
        m.layers.push_back(nn::Layer::batch_norm(spec.channels, pilot_length, nn::Activation::relu));
        in_ch = spec.channels;
    }
    m.layers.push_back(nn::Layer::dense(spec.channels * pilot_length, output_dim));
    m.shared_split = 2 * static_cast<std::size_t>(shared_blocks);
    m.validate();
    return m;
}

inline LayeredModel make_local_model(int pilot_length, int output_dim,
                                     const EstimatorSpec& spec = {}) {
    return make_model(pilot_length, output_dim, spec.local_conv_blocks, spec.local_conv_blocks, spec);
}

inline LayeredModel make_global_model(int pilot_length, int output_dim,
                                      const EstimatorSpec& spec = {}) {
    return make_model(pilot_length, output_dim, spec.global_conv_blocks, spec.local_conv_blocks, spec);
}

}  // namespace cffl::estimator

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "cffl/rng.hpp"

namespace cffl::nn {

enum class LayerKind { dense, conv1d, batch_norm };
enum class Activation { identity, relu };

// One parameterized layer. Dense layers flatten whatever comes in; conv1d and
// batch_norm interpret their input as (channels x length), row-major. conv1d
// uses zero padding that preserves length (odd kernels only).
struct Layer {
    LayerKind kind = LayerKind::dense;
    Activation activation = Activation::identity;

    int in_dim = 0, out_dim = 0;                  // dense
    int in_ch = 0, out_ch = 0, kernel = 0, length = 0;  // conv1d / batch_norm

    std::vector<double> weights;  // dense: out*in; conv: out_ch*in_ch*kernel; bn: gamma per channel
    std::vector<double> bias;     // dense: out; conv: out_ch; bn: beta per channel

    // batch_norm normalization buffers (inference-mode constants, not trained)
    std::vector<double> running_mean, running_var;
    static constexpr double bn_eps = 1e-5;

    int input_size() const {
        return kind == LayerKind::dense ? in_dim : in_ch * length;
    }
    int output_size() const {
        switch (kind) {
            case LayerKind::dense: return out_dim;
            case LayerKind::conv1d: return out_ch * length;
            case LayerKind::batch_norm: return in_ch * length;
        }
        return 0;
    }
    std::size_t param_count() const { return weights.size() + bias.size(); }

    static Layer dense(int in, int out, Activation act = Activation::identity) {
        Layer l;
        l.kind = LayerKind::dense;
        l.activation = act;
        l.in_dim = in;
        l.out_dim = out;
        l.weights.assign(static_cast<std::size_t>(in) * out, 0.0);
        l.bias.assign(out, 0.0);
        return l;
    }

    static Layer conv1d(int in_ch, int out_ch, int kernel, int length,
                        Activation act = Activation::identity) {
        if (kernel % 2 == 0) throw std::invalid_argument("conv1d: kernel must be odd");
        Layer l;
        l.kind = LayerKind::conv1d;
        l.activation = act;
        l.in_ch = in_ch;
        l.out_ch = out_ch;
        l.kernel = kernel;
        l.length = length;
        l.weights.assign(static_cast<std::size_t>(in_ch) * out_ch * kernel, 0.0);
        l.bias.assign(out_ch, 0.0);
        return l;
    }

    static Layer batch_norm(int channels, int length, Activation act = Activation::identity) {
        Layer l;
        l.kind = LayerKind::batch_norm;
        l.activation = act;
        l.in_ch = channels;
        l.out_ch = channels;
        l.length = length;
        l.weights.assign(channels, 1.0);  // gamma
        l.bias.assign(channels, 0.0);     // beta
        l.running_mean.assign(channels, 0.0);
        l.running_var.assign(channels, 1.0);
        return l;
    }
};

// Ordered parameter layers plus the shared/distillation partition index:
// layers [0, shared_split) form the shared part, the rest the distillation part.
struct LayeredModel {
    std::vector<Layer> layers;
    std::size_t shared_split = 0;

    int input_size() const { return layers.empty() ? 0 : layers.front().input_size(); }
    int output_size() const { return layers.empty() ? 0 : layers.back().output_size(); }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.param_count();
        return n;
    }
    std::size_t shared_param_count() const {
        std::size_t n = 0;
        for (std::size_t i = 0; i < shared_split && i < layers.size(); ++i)
            n += layers[i].param_count();
        return n;
    }

    void validate() const {
        for (std::size_t i = 0; i + 1 < layers.size(); ++i)
            if (layers[i].output_size() != layers[i + 1].input_size())
                throw std::invalid_argument("LayeredModel: layer " + std::to_string(i) +
                                            " output does not feed layer " + std::to_string(i + 1));
        if (shared_split > layers.size())
            throw std::invalid_argument("LayeredModel: shared_split out of range");
    }
};

struct Gradient {
    struct LayerGrad {
        std::vector<double> weights, bias;
    };
    std::vector<LayerGrad> layers;

    static Gradient zeros_like(const LayeredModel& m) {
        Gradient g;
        g.layers.resize(m.layers.size());
        for (std::size_t i = 0; i < m.layers.size(); ++i) {
            g.layers[i].weights.assign(m.layers[i].weights.size(), 0.0);
            g.layers[i].bias.assign(m.layers[i].bias.size(), 0.0);
        }
        return g;
    }

    void check_congruent(const LayeredModel& m) const {
        if (layers.size() != m.layers.size())
            throw std::invalid_argument("Gradient: layer count mismatch");
        for (std::size_t i = 0; i < layers.size(); ++i)
            if (layers[i].weights.size() != m.layers[i].weights.size() ||
                layers[i].bias.size() != m.layers[i].bias.size())
                throw std::invalid_argument("Gradient: shape mismatch at layer " + std::to_string(i));
    }

    void scale(double c) {
        for (auto& l : layers) {
            for (auto& w : l.weights) w *= c;
            for (auto& b : l.bias) b *= c;
        }
    }

    void add_scaled(const Gradient& other, double c) {
        for (std::size_t i = 0; i < layers.size(); ++i) {
            for (std::size_t j = 0; j < layers[i].weights.size(); ++j)
                layers[i].weights[j] += c * other.layers[i].weights[j];
            for (std::size_t j = 0; j < layers[i].bias.size(); ++j)
                layers[i].bias[j] += c * other.layers[i].bias[j];
        }
    }
};

inline void xavier_init(LayeredModel& model, Rng& rng) {
    for (auto& l : model.layers) {
        if (l.kind == LayerKind::batch_norm) continue;
        double fan_in, fan_out;
        if (l.kind == LayerKind::dense) {
            fan_in = l.in_dim;
            fan_out = l.out_dim;
        } else {
            fan_in = static_cast<double>(l.in_ch) * l.kernel;
            fan_out = static_cast<double>(l.out_ch) * l.kernel;
        }
        const double bound = std::sqrt(6.0 / (fan_in + fan_out));
        for (auto& w : l.weights) w = rng.uniform(-bound, bound);
        std::fill(l.bias.begin(), l.bias.end(), 0.0);
    }
}

namespace detail {

inline void layer_forward(const Layer& l, const std::vector<double>& x, std::vector<double>& pre) {
    pre.assign(l.output_size(), 0.0);
    switch (l.kind) {
        case LayerKind::dense: {
            for (int o = 0; o < l.out_dim; ++o) {
                double acc = l.bias[o];
                const double* wrow = &l.weights[static_cast<std::size_t>(o) * l.in_dim];
                for (int i = 0; i < l.in_dim; ++i) acc += wrow[i] * x[i];
                pre[o] = acc;
            }
            break;
        }
        case LayerKind::conv1d: {
            const int pad = l.kernel / 2;
            for (int oc = 0; oc < l.out_ch; ++oc) {
                for (int i = 0; i < l.length; ++i) {
                    double acc = l.bias[oc];
                    for (int ic = 0; ic < l.in_ch; ++ic) {
                        const double* w = &l.weights[(static_cast<std::size_t>(oc) * l.in_ch + ic) * l.kernel];
                        const double* xin = &x[static_cast<std::size_t>(ic) * l.length];
                        for (int k = 0; k < l.kernel; ++k) {
                            const int j = i + k - pad;
                            if (j >= 0 && j < l.length) acc += w[k] * xin[j];
                        }
                    }
                    pre[static_cast<std::size_t>(oc) * l.length + i] = acc;
                }
            }
            break;
        }
        case LayerKind::batch_norm: {
            for (int c = 0; c < l.in_ch; ++c) {
                const double inv_std = 1.0 / std::sqrt(l.running_var[c] + Layer::bn_eps);
                const double g = l.weights[c], b = l.bias[c], mu = l.running_mean[c];
                for (int i = 0; i < l.length; ++i) {
                    const std::size_t idx = static_cast<std::size_t>(c) * l.length + i;
                    pre[idx] = g * (x[idx] - mu) * inv_std + b;
                }
            }
            break;
        }
    }
}

inline void apply_activation(Activation act, std::vector<double>& v) {
    if (act == Activation::relu)
        for (auto& x : v) x = x > 0.0 ? x : 0.0;
}

// dPre = dOut masked by activation derivative (in place on dout).
inline void activation_backward(Activation act, const std::vector<double>& pre,
                                std::vector<double>& dout) {
    if (act == Activation::relu)
        for (std::size_t i = 0; i < dout.size(); ++i)
            if (pre[i] <= 0.0) dout[i] = 0.0;
}

inline void layer_backward(const Layer& l, const std::vector<double>& x,
                           const std::vector<double>& dpre, Gradient::LayerGrad& g,
                           std::vector<double>& dx) {
    dx.assign(l.input_size(), 0.0);
    switch (l.kind) {
        case LayerKind::dense: {
            for (int o = 0; o < l.out_dim; ++o) {
                const double d = dpre[o];
                g.bias[o] += d;
                double* gw = &g.weights[static_cast<std::size_t>(o) * l.in_dim];
                const double* wrow = &l.weights[static_cast<std::size_t>(o) * l.in_dim];
                for (int i = 0; i < l.in_dim; ++i) {
                    gw[i] += d * x[i];
                    dx[i] += d * wrow[i];
                }
            }
            break;
        }
        case LayerKind::conv1d: {
            const int pad = l.kernel / 2;
            for (int oc = 0; oc < l.out_ch; ++oc) {
                for (int i = 0; i < l.length; ++i) {
                    const double d = dpre[static_cast<std::size_t>(oc) * l.length + i];
                    if (d == 0.0) continue;
                    g.bias[oc] += d;
                    for (int ic = 0; ic < l.in_ch; ++ic) {
                        const std::size_t wbase = (static_cast<std::size_t>(oc) * l.in_ch + ic) * l.kernel;
                        const std::size_t xbase = static_cast<std::size_t>(ic) * l.length;
                        for (int k = 0; k < l.kernel; ++k) {
                            const int j = i + k - pad;
                            if (j < 0 || j >= l.length) continue;
                            g.weights[wbase + k] += d * x[xbase + j];
                            dx[xbase + j] += d * l.weights[wbase + k];
                        }
                    }
                }
            }
            break;
        }
        case LayerKind::batch_norm: {
            for (int c = 0; c < l.in_ch; ++c) {
                const double inv_std = 1.0 / std::sqrt(l.running_var[c] + Layer::bn_eps);
                const double mu = l.running_mean[c];
                for (int i = 0; i < l.length; ++i) {
                    const std::size_t idx = static_cast<std::size_t>(c) * l.length + i;
                    const double d = dpre[idx];
                    g.weights[c] += d * (x[idx] - mu) * inv_std;
                    g.bias[c] += d;
                    dx[idx] = d * l.weights[c] * inv_std;
                }
            }
            break;
        }
    }
}

}  // namespace detail

struct ForwardCache {
    std::vector<std::vector<double>> inputs;  // input to each layer
    std::vector<std::vector<double>> preact;  // pre-activation of each layer
    std::vector<double> output;
};

inline std::vector<double> forward_cached(const LayeredModel& model, const std::vector<double>& x,
                                          ForwardCache& cache) {
    if (static_cast<int>(x.size()) != model.input_size())
        throw std::invalid_argument("forward: input size mismatch");
    cache.inputs.assign(model.layers.size(), {});
    cache.preact.assign(model.layers.size(), {});
    std::vector<double> cur = x;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        cache.inputs[i] = cur;
        detail::layer_forward(model.layers[i], cur, cache.preact[i]);
        cur = cache.preact[i];
        detail::apply_activation(model.layers[i].activation, cur);
    }
    cache.output = cur;
    return cur;
}

inline std::vector<double> forward(const LayeredModel& model, const std::vector<double>& x) {
    ForwardCache cache;
    return forward_cached(model, x, cache);
}

// Backpropagate dL/dOutput through the cached pass; parameter gradients are
// accumulated into `grad`, the returned vector is dL/dInput.
inline std::vector<double> backward_from_output(const LayeredModel& model, const ForwardCache& cache,
                                                std::vector<double> dout, Gradient& grad) {
    for (std::size_t ri = model.layers.size(); ri-- > 0;) {
        detail::activation_backward(model.layers[ri].activation, cache.preact[ri], dout);
        std::vector<double> dx;
        detail::layer_backward(model.layers[ri], cache.inputs[ri], dout, grad.layers[ri], dx);
        dout = std::move(dx);
    }
    return dout;
}

// omega <- omega - eta * g, restricted to layers [first, last).
inline void sgd_step_range(LayeredModel& model, const Gradient& grad, double lr,
                           std::size_t first, std::size_t last) {
    grad.check_congruent(model);
    if (!(lr > 0.0)) throw std::invalid_argument("sgd_step: learning rate must be > 0");
    last = std::min(last, model.layers.size());
    for (std::size_t i = first; i < last; ++i) {
        for (std::size_t j = 0; j < model.layers[i].weights.size(); ++j)
            model.layers[i].weights[j] -= lr * grad.layers[i].weights[j];
        for (std::size_t j = 0; j < model.layers[i].bias.size(); ++j)
            model.layers[i].bias[j] -= lr * grad.layers[i].bias[j];
    }
}

inline void sgd_step(LayeredModel& model, const Gradient& grad, double lr) {
    sgd_step_range(model, grad, lr, 0, model.layers.size());
}

}  // namespace cffl::nn

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "cffl/estimator.hpp"

using namespace cffl;
using namespace cffl::estimator;
using nn::LayeredModel;

namespace {

LayeredModel tiny_model(std::uint64_t seed) {
    LayeredModel m;
    m.layers.push_back(nn::Layer::conv1d(2, 3, 3, 5, nn::Activation::identity));
    m.layers.push_back(nn::Layer::batch_norm(3, 5, nn::Activation::relu));
    m.layers.push_back(nn::Layer::dense(15, 4));
    m.shared_split = 2;
    Rng rng(seed);
    nn::xavier_init(m, rng);
    // non-trivial batch-norm statistics
    for (auto& l : m.layers)
        if (l.kind == nn::LayerKind::batch_norm)
            for (std::size_t c = 0; c < l.running_mean.size(); ++c) {
                l.running_mean[c] = 0.1 * static_cast<double>(c) - 0.05;
                l.running_var[c] = 0.5 + 0.2 * static_cast<double>(c);
                l.weights[c] = 1.0 + 0.1 * static_cast<double>(c);
                l.bias[c] = -0.02 * static_cast<double>(c);
            }
    return m;
}

TrainBatch random_batch(const LayeredModel& m, std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    TrainBatch b;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> x(static_cast<std::size_t>(m.input_size()));
        std::vector<double> y(static_cast<std::size_t>(m.output_size()));
        for (auto& v : x) v = rng.uniform(-1.0, 1.0);
        for (auto& v : y) v = rng.uniform(-1.0, 1.0);
        b.inputs.push_back(std::move(x));
        b.targets.push_back(std::move(y));
    }
    return b;
}

double param_get(const LayeredModel& m, std::size_t layer, bool is_bias, std::size_t idx) {
    return is_bias ? m.layers[layer].bias[idx] : m.layers[layer].weights[idx];
}

void param_set(LayeredModel& m, std::size_t layer, bool is_bias, std::size_t idx, double v) {
    (is_bias ? m.layers[layer].bias[idx] : m.layers[layer].weights[idx]) = v;
}

// Central finite-difference derivative of the batch MSE loss w.r.t. one
// parameter; the independent oracle for backward().
double fd_grad(LayeredModel m, const TrainBatch& b, std::size_t layer, bool is_bias,
               std::size_t idx, double step) {
    const double orig = param_get(m, layer, is_bias, idx);
    param_set(m, layer, is_bias, idx, orig + step);
    const double up = mse_loss(m, b);
    param_set(m, layer, is_bias, idx, orig - step);
    const double dn = mse_loss(m, b);
    return (up - dn) / (2.0 * step);
}

}  // namespace

TEST_CASE("forward matches an independent per-layer oracle on a conv block") {
    // one conv1d layer, checked against a direct zero-padded convolution
    nn::LayeredModel m;
    m.layers.push_back(nn::Layer::conv1d(2, 2, 3, 4, nn::Activation::identity));
    Rng rng(31);
    nn::xavier_init(m, rng);
    std::vector<double> x(8);
    for (auto& v : x) v = rng.uniform(-1.0, 1.0);

    const auto& l = m.layers[0];
    std::vector<double> want(8, 0.0);
    for (int oc = 0; oc < 2; ++oc)
        for (int i = 0; i < 4; ++i) {
            double acc = l.bias[oc];
            for (int ic = 0; ic < 2; ++ic)
                for (int k = 0; k < 3; ++k) {
                    const int j = i + k - 1;
                    if (j >= 0 && j < 4)
                        acc += l.weights[(oc * 2 + ic) * 3 + k] * x[ic * 4 + j];
                }
            want[oc * 4 + i] = acc;
        }
    const auto got = nn::forward(m, x);
    for (int i = 0; i < 8; ++i) REQUIRE(std::abs(got[i] - want[i]) < 1e-14);
}

TEST_CASE("batch norm is the expected affine map of its input") {
    nn::LayeredModel m;
    m.layers.push_back(nn::Layer::batch_norm(2, 3));
    auto& l = m.layers[0];
    l.running_mean = {0.5, -0.25};
    l.running_var = {4.0, 0.25};
    l.weights = {2.0, 3.0};  // gamma
    l.bias = {1.0, -1.0};    // beta
    const std::vector<double> x{1.5, 2.5, 0.5, 0.75, -0.25, 0.0};
    const auto y = nn::forward(m, x);
    for (int c = 0; c < 2; ++c)
        for (int i = 0; i < 3; ++i) {
            const double want = l.weights[c] * (x[c * 3 + i] - l.running_mean[c]) /
                                    std::sqrt(l.running_var[c] + nn::Layer::bn_eps) +
                                l.bias[c];
            REQUIRE(std::abs(y[c * 3 + i] - want) < 1e-12);
        }
}

TEST_CASE("backward matches central finite differences on every layer kind") {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        LayeredModel m = tiny_model(seed);
        const TrainBatch b = random_batch(m, 4, seed + 100);
        const auto grad = estimator::backward(m, b);
        for (std::size_t layer = 0; layer < m.layers.size(); ++layer) {
            for (bool is_bias : {false, true}) {
                const auto& g =
                    is_bias ? grad.layers[layer].bias : grad.layers[layer].weights;
                for (std::size_t idx = 0; idx < g.size(); idx += 2) {
                    const double fd = fd_grad(m, b, layer, is_bias, idx, 1e-5);
                    const double denom = std::max({std::abs(fd), std::abs(g[idx]), 1e-6});
                    REQUIRE(std::abs(g[idx] - fd) / denom < 1e-4);
                }
            }
        }
    }
}

TEST_CASE("gradient descent on a quadratic converges at the analytic rate") {
    // Single dense 1->1 layer, one sample (x=1, y=0), no bias update checked:
    // loss = (w + b)^2; gradient flow keeps w + b shrinking by (1 - 4 lr).
    LayeredModel m;
    m.layers.push_back(nn::Layer::dense(1, 1));
    m.layers[0].weights = {1.0};
    m.layers[0].bias = {0.5};
    TrainBatch b;
    b.inputs = {{1.0}};
    b.targets = {{0.0}};
    const double lr = 0.05;
    double s = 1.5;  // w + b
    for (int step = 0; step < 50; ++step) {
        estimator::sgd_step(m, estimator::backward(m, b), lr);
        s *= (1.0 - 4.0 * lr);  // dw = db = 2s, so s' = s - lr*4s
        REQUIRE(std::abs((m.layers[0].weights[0] + m.layers[0].bias[0]) - s) < 1e-12);
    }
    REQUIRE(mse_loss(m, b) < 1e-6);
}

TEST_CASE("local_train rejects neighbors below the contribution floor") {
    LayeredModel m = tiny_model(9);
    TrainBatch own = random_batch(m, 20, 1);
    TrainBatch small = random_batch(m, 1, 2);  // below 0.1 * 20
    LocalTrainOptions opt;
    REQUIRE_THROWS_AS(local_train(m, own, {&small}, opt), NeighborContributionError);
    REQUIRE_THROWS_AS(local_train(m, TrainBatch{}, {}, opt), std::invalid_argument);
}

TEST_CASE("an identical neighbor matches doubling the own-loss weight") {
    LayeredModel a = tiny_model(10);
    LayeredModel b = a;
    const TrainBatch own = random_batch(a, 8, 3);
    LocalTrainOptions opt;
    opt.epochs = 2;
    opt.batch_size = 4;
    local_train(a, own, {&own}, opt);
    // manual doubled-gradient trajectory
    for (int e = 0; e < opt.epochs; ++e)
        for (std::size_t off = 0; off < own.size(); off += 4) {
            TrainBatch step;
            for (std::size_t i = 0; i < 4; ++i) {
                step.inputs.push_back(own.inputs[off + i]);
                step.targets.push_back(own.targets[off + i]);
            }
            auto grad = estimator::backward(b, step);
            grad.scale(2.0);
            nn::sgd_step(b, grad, opt.learning_rate);
        }
    for (std::size_t l = 0; l < a.layers.size(); ++l)
        for (std::size_t i = 0; i < a.layers[l].weights.size(); ++i)
            REQUIRE(a.layers[l].weights[i] == b.layers[l].weights[i]);
}

TEST_CASE("training monotonically decreases the loss on a small batch") {
    LayeredModel m = tiny_model(12);
    const TrainBatch b = random_batch(m, 6, 4);
    double prev = mse_loss(m, b);
    for (int step = 0; step < 30; ++step) {
        estimator::sgd_step(m, estimator::backward(m, b), 1e-3);
        const double cur = mse_loss(m, b);
        REQUIRE(cur <= prev + 1e-12);
        prev = cur;
    }
}

TEST_CASE("NMSE values and edge cases") {
    const std::vector<double> truth{1.0, 2.0, -2.0};
    REQUIRE(nmse_db(truth, truth) == kNmseFloorDb);
    REQUIRE(nmse_linear(truth, truth) == 0.0);

    // estimate = truth * 1.1 -> nmse = 0.01 -> -20 dB
    std::vector<double> est{1.1, 2.2, -2.2};
    REQUIRE(std::abs(nmse_linear(est, truth) - 0.01) < 1e-12);
    REQUIRE(std::abs(nmse_db(est, truth) + 20.0) < 1e-9);

    // zero estimate -> nmse = 1 -> 0 dB
    REQUIRE(std::abs(nmse_db({0.0, 0.0, 0.0}, truth)) < 1e-12);

    REQUIRE_THROWS_AS(nmse_db({1.0}, {0.0}), std::invalid_argument);
    REQUIRE_THROWS_AS(nmse_linear({1.0}, {1.0, 2.0}), std::invalid_argument);
    REQUIRE_THROWS_AS(mse_loss(tiny_model(1), TrainBatch{}), std::invalid_argument);
}

TEST_CASE("model factories produce congruent shared prefixes") {
    EstimatorSpec spec;
    const auto local = make_local_model(16, 32, spec);
    const auto global = make_global_model(16, 32, spec);
    REQUIRE(local.shared_split == 6);
    REQUIRE(global.shared_split == 6);
    REQUIRE(local.layers.size() == 7);    // 3 conv blocks + dense
    REQUIRE(global.layers.size() == 11);  // 5 conv blocks + dense
    REQUIRE(local.input_size() == 32);    // 2 channels x pilot length
    REQUIRE(local.output_size() == 32);
    for (std::size_t i = 0; i < 6; ++i) {
        REQUIRE(local.layers[i].kind == global.layers[i].kind);
        REQUIRE(local.layers[i].weights.size() == global.layers[i].weights.size());
    }
}

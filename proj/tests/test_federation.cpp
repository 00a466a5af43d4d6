#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "cffl/federation.hpp"

using namespace cffl;
using namespace cffl::federation;
using nn::Gradient;
using nn::LayeredModel;

namespace {

LayeredModel small_model(std::uint64_t seed) {
    LayeredModel m;
    m.layers.push_back(nn::Layer::dense(4, 8, nn::Activation::relu));
    m.layers.push_back(nn::Layer::dense(8, 3));
    Rng rng(seed);
    nn::xavier_init(m, rng);
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

Gradient constant_gradient(const LayeredModel& m, double v) {
    Gradient g = Gradient::zeros_like(m);
    for (auto& l : g.layers) {
        std::fill(l.weights.begin(), l.weights.end(), v);
        std::fill(l.bias.begin(), l.bias.end(), v);
    }
    return g;
}

}  // namespace

TEST_CASE("distance weight hits the documented edge values") {
    const double l_ref = 100.0;
    REQUIRE(dis_weight(0.0, l_ref) == 1.0);
    REQUIRE(dis_weight(l_ref, l_ref) == 0.0);
    REQUIRE(dis_weight(1.5 * l_ref, l_ref) == 0.0);
    REQUIRE(std::abs(dis_weight(25.0, l_ref) - 0.75) < 1e-15);
    REQUIRE_THROWS_AS(dis_weight(1.0, 0.0), std::invalid_argument);
    REQUIRE_THROWS_AS(dis_weight(-1.0, l_ref), std::invalid_argument);
}

TEST_CASE("rsrp weight hits the documented edge values") {
    const double pc = -80.0, delta = 3.0, ap = 0.7;
    REQUIRE(rsrp_dis_weight(pc, pc, delta, ap) == ap);                // center: factor 1
    REQUIRE(rsrp_dis_weight(pc + delta, pc, delta, ap) == 0.0);      // strict window edge
    REQUIRE(rsrp_dis_weight(pc - delta, pc, delta, ap) == 0.0);
    REQUIRE(std::abs(rsrp_dis_weight(pc + delta / 2.0, pc, delta, ap) - 0.75 * ap) < 1e-15);
    REQUIRE_THROWS_AS(rsrp_dis_weight(pc, pc, 0.0, ap), std::invalid_argument);
}

TEST_CASE("aggregation of three constant gradients equals the weighted mean") {
    const LayeredModel m = small_model(1);
    std::map<int, Gradient> grads;
    grads.emplace(0, constant_gradient(m, 1.0));
    grads.emplace(1, constant_gradient(m, 2.0));
    grads.emplace(2, constant_gradient(m, 6.0));
    const std::map<int, double> alpha{{0, 1.0}, {1, 1.0}, {2, 1.0}};
    const Gradient r = aggregate_gradients(grads, alpha);
    for (const auto& l : r.layers)
        for (double w : l.weights) REQUIRE(std::abs(w - 3.0) < 1e-12);

    // unequal weights: (0.5*1 + 0.25*2 + 0.25*6) = 2.5
    const std::map<int, double> alpha2{{0, 2.0}, {1, 1.0}, {2, 1.0}};
    const Gradient r2 = aggregate_gradients(grads, alpha2);
    for (const auto& l : r2.layers)
        for (double w : l.weights) REQUIRE(std::abs(w - 2.5) < 1e-12);
}

TEST_CASE("normalized weights sum to one and order does not matter") {
    const LayeredModel m = small_model(2);
    Rng rng(7);
    std::map<int, Gradient> grads;
    std::map<int, double> alpha;
    for (int i = 0; i < 5; ++i) {
        grads.emplace(i, constant_gradient(m, rng.uniform(-2.0, 2.0)));
        alpha[i] = rng.uniform(0.1, 3.0);
    }
    double total = 0.0;
    for (const auto& [id, w] : alpha) total += w;
    double norm_sum = 0.0;
    for (const auto& [id, w] : alpha) norm_sum += w / total;
    REQUIRE(std::abs(norm_sum - 1.0) < 1e-12);

    const Gradient fwd = aggregate_gradients(grads, alpha);
    // same members inserted in a different order (maps normalize order anyway,
    // so build from a reversed copy)
    std::map<int, Gradient> rev;
    for (int i = 4; i >= 0; --i) rev.emplace(i, grads.at(i));
    const Gradient bwd = aggregate_gradients(rev, alpha);
    for (std::size_t l = 0; l < fwd.layers.size(); ++l)
        for (std::size_t j = 0; j < fwd.layers[l].weights.size(); ++j)
            REQUIRE(std::abs(fwd.layers[l].weights[j] - bwd.layers[l].weights[j]) < 1e-12);
}

TEST_CASE("degenerate all-zero weights abort the round") {
    const LayeredModel m = small_model(3);
    std::map<int, Gradient> grads;
    grads.emplace(0, constant_gradient(m, 1.0));
    grads.emplace(1, constant_gradient(m, 2.0));
    const std::map<int, double> alpha{{0, 0.0}, {1, 0.0}};
    REQUIRE_THROWS_AS(aggregate_gradients(grads, alpha), DegenerateWeightsError);
    REQUIRE_THROWS_AS(aggregate_gradients({}, alpha), std::invalid_argument);
    const std::map<int, double> negative{{0, -1.0}, {1, 1.0}};
    REQUIRE_THROWS_AS(aggregate_gradients(grads, negative), std::invalid_argument);
}

TEST_CASE("a single-member FL round bit-equals solo training") {
    LayeredModel fl_model = small_model(4);
    LayeredModel solo_model = fl_model;
    const TrainBatch data = random_batch(fl_model, 10, 11);

    FLGroup group;
    group.member_ids = {7};
    group.center_id = 7;
    TransferContext ctx;
    ctx.distances[7] = 10.0;
    ctx.reference_distance = 100.0;
    RoundOptions opt;
    opt.local_steps = 3;
    run_fl_round(group, fl_model, {{7, data}}, Strategy::dis, ctx, opt);

    for (int step = 0; step < 3; ++step)
        estimator::sgd_step(solo_model, estimator::backward(solo_model, data), opt.learning_rate);

    for (std::size_t l = 0; l < fl_model.layers.size(); ++l) {
        for (std::size_t j = 0; j < fl_model.layers[l].weights.size(); ++j)
            REQUIRE(fl_model.layers[l].weights[j] == solo_model.layers[l].weights[j]);
        for (std::size_t j = 0; j < fl_model.layers[l].bias.size(); ++j)
            REQUIRE(fl_model.layers[l].bias[j] == solo_model.layers[l].bias[j]);
    }
}

TEST_CASE("dis strategy with every member at the reference distance aborts") {
    LayeredModel m = small_model(5);
    FLGroup group;
    group.member_ids = {0, 1};
    TransferContext ctx;
    ctx.reference_distance = 50.0;
    ctx.distances[0] = 50.0;
    ctx.distances[1] = 75.0;
    std::map<int, TrainBatch> data;
    data[0] = random_batch(m, 4, 1);
    data[1] = random_batch(m, 4, 2);
    REQUIRE_THROWS_AS(run_fl_round(group, m, data, Strategy::dis, ctx), DegenerateWeightsError);
}

TEST_CASE("round report counts 2K model transfers") {
    LayeredModel m = small_model(6);
    FLGroup group;
    group.member_ids = {0, 1, 2};
    TransferContext ctx;
    std::map<int, TrainBatch> data;
    for (int i = 0; i < 3; ++i) {
        ctx.distances[i] = 0.0;
        data[i] = random_batch(m, 4, 20 + i);
    }
    const auto report = run_fl_round(group, m, data, Strategy::plain, ctx);
    REQUIRE(report.model_transfers == 6);
    REQUIRE(report.params_exchanged == 6 * m.param_count());
    REQUIRE(report.bytes_exchanged == report.params_exchanged * 8);
    REQUIRE(report.weights.size() == 3);
    for (const auto& [id, w] : report.weights) REQUIRE(w == 1.0);
}

TEST_CASE("center selection maximizes the distance weight") {
    TransferContext ctx;
    ctx.reference_distance = 100.0;
    ctx.distances = {{0, 80.0}, {1, 10.0}, {2, 40.0}};
    REQUIRE(select_center({0, 1, 2}, ctx) == 1);
    REQUIRE_THROWS_AS(select_center({}, ctx), std::invalid_argument);
}

TEST_CASE("strategy names round-trip") {
    for (auto s : {Strategy::plain, Strategy::dis, Strategy::rsrp_dis})
        REQUIRE(strategy_from_string(to_string(s)) == s);
    REQUIRE_THROWS_AS(strategy_from_string("bogus"), std::invalid_argument);
}

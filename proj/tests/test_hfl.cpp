#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>

#include "cffl/hfl.hpp"

using namespace cffl;
using namespace cffl::hfl;
using estimator::TrainBatch;
using nn::LayeredModel;

namespace {

LayeredModel make_pair_local(std::uint64_t seed) {
    LayeredModel m;
    m.layers.push_back(nn::Layer::dense(4, 6, nn::Activation::relu));
    m.layers.push_back(nn::Layer::dense(6, 3));
    m.shared_split = 1;
    Rng rng(seed);
    nn::xavier_init(m, rng);
    return m;
}

LayeredModel make_pair_global(std::uint64_t seed) {
    LayeredModel m;
    m.layers.push_back(nn::Layer::dense(4, 6, nn::Activation::relu));
    m.layers.push_back(nn::Layer::dense(6, 6, nn::Activation::relu));
    m.layers.push_back(nn::Layer::dense(6, 3));
    m.shared_split = 1;
    Rng rng(seed);
    nn::xavier_init(m, rng);
    return m;
}

TrainBatch random_batch(int in, int out, std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    TrainBatch b;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> x(static_cast<std::size_t>(in));
        std::vector<double> y(static_cast<std::size_t>(out));
        for (auto& v : x) v = rng.uniform(-1.0, 1.0);
        for (auto& v : y) v = rng.uniform(-1.0, 1.0);
        b.inputs.push_back(std::move(x));
        b.targets.push_back(std::move(y));
    }
    return b;
}

std::size_t hash_layers(const LayeredModel& m, std::size_t first, std::size_t last) {
    std::size_t h = 1469598103934665603ULL;
    auto mix = [&h](double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof(bits));
        h ^= bits;
        h *= 1099511628211ULL;
    };
    for (std::size_t i = first; i < last && i < m.layers.size(); ++i) {
        for (double w : m.layers[i].weights) mix(w);
        for (double b : m.layers[i].bias) mix(b);
    }
    return h;
}

}  // namespace

TEST_CASE("shared aggregation divides by L verbatim") {
    // two locals with scalar shared weights 2*3 and 4*6: (2*3 + 4*6)/2 = 15
    LayeredModel a, b;
    a.layers.push_back(nn::Layer::dense(1, 1));
    a.layers.push_back(nn::Layer::dense(1, 1));
    a.shared_split = 1;
    b = a;
    a.layers[0].weights = {3.0};
    b.layers[0].weights = {6.0};
    const std::vector<double> beta{2.0, 4.0};
    const auto shared = aggregate_shared({&a, &b}, beta);
    REQUIRE(shared.size() == 1);
    REQUIRE(shared[0].weights[0] == 15.0);

    // betas summing to L reproduce the weighted mean
    const auto mean = aggregate_shared({&a, &b}, {1.0, 1.0});
    REQUIRE(mean[0].weights[0] == 4.5);

    REQUIRE_THROWS_AS(aggregate_shared({}, {}), std::invalid_argument);
    REQUIRE_THROWS_AS(aggregate_shared({&a, &b}, {1.0}), std::invalid_argument);
}

TEST_CASE("structural congruence checks") {
    const auto local = make_pair_local(1);
    const auto global = make_pair_global(2);
    REQUIRE(shared_parts_congruent(local, global));
    HflPair pair{make_pair_global(3), make_pair_local(4), {}};
    REQUIRE_NOTHROW(pair.validate());

    HflPair bad{make_pair_local(5), make_pair_local(6), {}};
    REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);  // global not larger

    auto mismatched = make_pair_local(7);
    mismatched.layers[0] = nn::Layer::dense(5, 6, nn::Activation::relu);
    REQUIRE(!shared_parts_congruent(mismatched, global));
}

TEST_CASE("distillation-part training freezes the shared part") {
    LayeredModel global = make_pair_global(11);
    const TrainBatch server = random_batch(4, 3, 16, 21);
    const std::size_t shared_before = hash_layers(global, 0, global.shared_split);
    DistillOptions opt;
    opt.max_epochs = 5;
    train_distill_global(global, server, opt);
    REQUIRE(hash_layers(global, 0, global.shared_split) == shared_before);
    REQUIRE_THROWS_AS(train_distill_global(global, TrainBatch{}, opt), std::invalid_argument);
}

TEST_CASE("distill_to_local copies the shared part and trains only the suffix") {
    const LayeredModel global = make_pair_global(13);
    const LayeredModel local_template = make_pair_local(14);
    const TrainBatch server = random_batch(4, 3, 16, 23);
    Rng rng(31);
    DistillOptions opt;
    opt.max_epochs = 5;
    const LayeredModel local =
        distill_to_local(global, local_template, server, rng, DistillTarget::teacher_outputs, opt);
    REQUIRE(hash_layers(local, 0, 1) == hash_layers(global, 0, 1));
    // fresh suffix: must differ from the template's suffix
    REQUIRE(hash_layers(local, 1, 2) != hash_layers(local_template, 1, 2));
}

TEST_CASE("linear distillation reaches the least-squares optimum") {
    // identity-shared 1-layer suffix distilling a linear teacher: the suffix is
    // a dense layer trained on (x, Wx+b), so it must recover W and b. The
    // least-squares oracle here is the teacher itself (exact representability).
    LayeredModel global;
    global.layers.push_back(nn::Layer::dense(3, 3));  // shared: fixed random linear map
    global.layers.push_back(nn::Layer::dense(3, 2));  // teacher suffix
    global.shared_split = 1;
    Rng rng(41);
    nn::xavier_init(global, rng);

    LayeredModel local_template;
    local_template.layers.push_back(nn::Layer::dense(3, 3));
    local_template.layers.push_back(nn::Layer::dense(3, 2));
    local_template.shared_split = 1;
    nn::xavier_init(local_template, rng);

    TrainBatch server = random_batch(3, 2, 64, 43);
    DistillOptions opt;
    opt.max_epochs = 4000;
    opt.learning_rate = 0.05;
    opt.batch_size = 64;
    opt.convergence_rel_improvement = 0.0;  // run the full budget
    const LayeredModel local =
        distill_to_local(global, local_template, server, rng, DistillTarget::teacher_outputs, opt);

    // student suffix must match the teacher suffix on the training inputs
    for (const auto& x : server.inputs) {
        const auto want = nn::forward(global, x);
        const auto got = nn::forward(local, x);
        for (std::size_t j = 0; j < want.size(); ++j)
            REQUIRE(std::abs(got[j] - want[j]) < 1e-3);
    }
}

TEST_CASE("self-distillation with a constant teacher fits the constant") {
    LayeredModel global = make_pair_global(17);
    // zero out the last layer so the teacher is the constant bias vector
    auto& last = global.layers.back();
    std::fill(last.weights.begin(), last.weights.end(), 0.0);
    last.bias = {0.3, -0.2, 0.1};
    const TrainBatch server = random_batch(4, 3, 32, 29);
    Rng rng(51);
    DistillOptions opt;
    opt.max_epochs = 6000;
    opt.learning_rate = 0.05;
    opt.convergence_rel_improvement = 0.0;
    const LayeredModel local = distill_to_local(global, make_pair_local(18), server, rng,
                                                DistillTarget::teacher_outputs, opt);
    for (const auto& x : server.inputs) {
        const auto got = nn::forward(local, x);
        REQUIRE(std::abs(got[0] - 0.3) < 1e-2);
        REQUIRE(std::abs(got[1] + 0.2) < 1e-2);
        REQUIRE(std::abs(got[2] - 0.1) < 1e-2);
    }
}

TEST_CASE("hfl round reports shared-part uplink counts and is deterministic") {
    HflPair pair;
    pair.global_model = make_pair_global(61);
    pair.local_template = make_pair_local(62);
    pair.server_dataset = random_batch(4, 3, 8, 63);
    HflPair pair2 = pair;

    std::map<int, TrainBatch> data;
    data[0] = random_batch(4, 3, 8, 64);
    data[1] = random_batch(4, 3, 8, 65);
    const std::vector<double> beta{1.0, 1.0};
    HflRoundOptions opt;
    opt.distill.max_epochs = 3;

    Rng rng_a = Rng::stream(99, 1);
    Rng rng_b = Rng::stream(99, 1);
    const auto report = run_hfl_round(pair, {0, 1}, data, beta, rng_a, opt);
    const auto report2 = run_hfl_round(pair2, {0, 1}, data, beta, rng_b, opt);

    REQUIRE(report.uplink_params == 2 * pair.local_template.shared_param_count());
    REQUIRE(report.downlink_params == 2 * pair.local_template.param_count());
    REQUIRE(report.member_nmse_linear.size() == 2);
    for (const auto& [id, v] : report.member_nmse_linear)
        REQUIRE(v == report2.member_nmse_linear.at(id));
    REQUIRE(hash_layers(pair.local_template, 0, 2) == hash_layers(pair2.local_template, 0, 2));

    REQUIRE_THROWS_AS(run_hfl_round(pair, {}, data, {}, rng_a, opt), std::invalid_argument);
    REQUIRE_THROWS_AS(run_hfl_round(pair, {0, 1}, data, {1.0}, rng_a, opt),
                      std::invalid_argument);
}

TEST_CASE("two-user HFL lowers NMSE on a learnable linear task") {
    // targets are a fixed linear map of the inputs; HFL rounds should reduce
    // the members' NMSE versus the untouched template
    Rng gen(71);
    nn::LayeredModel truth_map;
    truth_map.layers.push_back(nn::Layer::dense(4, 3));
    nn::xavier_init(truth_map, gen);
    auto make_data = [&](std::size_t n, std::uint64_t seed) {
        Rng rng(seed);
        TrainBatch b;
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> x(4);
            for (auto& v : x) v = rng.uniform(-1.0, 1.0);
            b.targets.push_back(nn::forward(truth_map, x));
            b.inputs.push_back(std::move(x));
        }
        return b;
    };

    HflPair pair;
    pair.global_model = make_pair_global(72);
    pair.local_template = make_pair_local(73);
    pair.server_dataset = make_data(32, 74);
    std::map<int, TrainBatch> data;
    data[0] = make_data(48, 75);
    data[1] = make_data(48, 76);

    const double before = (estimator::mean_nmse_linear(pair.local_template, data.at(0)) +
                           estimator::mean_nmse_linear(pair.local_template, data.at(1))) /
                          2.0;
    HflRoundOptions opt;
    opt.local.epochs = 2;
    opt.local.learning_rate = 0.02;
    opt.distill.max_epochs = 40;
    opt.distill.learning_rate = 0.02;
    Rng rng = Rng::stream(5, 5);
    for (int round = 0; round < 20; ++round)
        run_hfl_round(pair, {0, 1}, data, {1.0, 1.0}, rng, opt);
    const double after = (estimator::mean_nmse_linear(pair.local_template, data.at(0)) +
                          estimator::mean_nmse_linear(pair.local_template, data.at(1))) /
                         2.0;
    REQUIRE(after < before);
}

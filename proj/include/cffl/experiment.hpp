#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "cffl/coalition.hpp"
#include "cffl/config.hpp"
#include "cffl/drl.hpp"
#include "cffl/federation.hpp"
#include "cffl/hfl.hpp"
#include "cffl/io.hpp"
#include "cffl/metrics.hpp"

namespace cffl::experiment {

using config::ExperimentConfig;
using estimator::TrainBatch;
using nn::LayeredModel;

inline unsigned worker_cap() {
    if (const char* env = std::getenv("CFFL_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) return static_cast<unsigned>(v);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

// Runs fn(0..n-1), at most worker_cap() tasks in flight. Results are applied
// by index inside fn, so the schedule does not affect the output.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    const unsigned cap = std::min<std::size_t>(worker_cap(), n);
    if (cap <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < cap; ++t)
        pool.emplace_back([&] {
            for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
        });
    for (auto& th : pool) th.join();
}

// ---------------------------------------------------------------------------
// Scenario materialization
// ---------------------------------------------------------------------------

struct MaterializedScenario {
    std::vector<TrainBatch> train;  // per user
    std::vector<TrainBatch> eval;   // held-out tail per user
    std::vector<Eigen::MatrixXcd> mean_channels;
    std::vector<std::vector<double>> correlation;  // K x K
    int pilot_length = 0;
    int output_dim = 0;
};

inline MaterializedScenario materialize(const ExperimentConfig& cfg, double snr_db,
                                        std::uint64_t seed) {
    channel::ScenarioConfig sc = cfg.scenario;
    sc.snr_db = snr_db;
    sc.seed = seed;
    const auto datasets = channel::generate_scenario(sc);

    MaterializedScenario m;
    const int k = sc.num_users;
    m.pilot_length = sc.pilot_length;
    m.output_dim = 2 * sc.ris_geom.size() * sc.cascaded_cols();
    m.train.resize(k);
    m.eval.resize(k);
    m.mean_channels.resize(k);
    for (int u = 0; u < k; ++u) {
        const auto& ds = datasets[u];
        const std::size_t total = ds.samples.size();
        const std::size_t eval_count =
            std::max<std::size_t>(1, static_cast<std::size_t>(cfg.eval_fraction * total));
        const std::size_t train_count = total - eval_count;
        m.train[u] = estimator::to_batch(ds, 0, train_count);
        m.eval[u] = estimator::to_batch(ds, train_count, eval_count);
        Eigen::MatrixXcd mean = Eigen::MatrixXcd::Zero(ds.samples.front().truth.matrix.rows(),
                                                       ds.samples.front().truth.matrix.cols());
        for (const auto& s : ds.samples) mean += s.truth.matrix;
        m.mean_channels[u] = mean / static_cast<double>(total);
    }
    m.correlation.assign(k, std::vector<double>(k, 1.0));
    for (int i = 0; i < k; ++i)
        for (int j = i + 1; j < k; ++j)
            m.correlation[i][j] = m.correlation[j][i] =
                metrics::channel_correlation(m.mean_channels[i], m.mean_channels[j]);
    return m;
}

inline federation::TransferContext make_transfer_context(const ExperimentConfig& cfg,
                                                         const MaterializedScenario& m,
                                                         const std::vector<int>& members) {
    federation::TransferContext ctx;
    ctx.reference_distance = cfg.reference_distance;
    ctx.power_band = cfg.power_band;
    const int center = *std::min_element(members.begin(), members.end());
    const int center_cluster =
        channel::cluster_of_user(cfg.scenario.layout, center, cfg.scenario.num_users);
    for (int u : members) {
        const int cluster = channel::cluster_of_user(cfg.scenario.layout, u, cfg.scenario.num_users);
        const double base = cluster == center_cluster ? 0.2 : 0.8;
        ctx.distances[u] = cfg.reference_distance * (base + 0.01 * u);
        ctx.powers[u] = federation::mean_rsrp(m.train[u]);
    }
    ctx.distances[center] = 0.0;
    ctx.center_power = ctx.powers.at(center);
    return ctx;
}

// ---------------------------------------------------------------------------
// Inner training loops
// ---------------------------------------------------------------------------

struct TrainedGroupResult {
    std::map<int, double> user_nmse_linear;
    std::size_t bytes_exchanged = 0;
};

inline LayeredModel initial_model(const ExperimentConfig& cfg, const MaterializedScenario& m,
                                  std::uint64_t seed) {
    LayeredModel model =
        estimator::make_local_model(m.pilot_length, m.output_dim, cfg.estimator_spec);
    Rng rng = Rng::stream(seed, 0x1417);
    nn::xavier_init(model, rng);
    return model;
}

// FL (or solo SGD) over one group of users for `rounds` rounds.
inline TrainedGroupResult train_group_fl(const ExperimentConfig& cfg, const MaterializedScenario& m,
                                         const std::vector<int>& members, int rounds,
                                         std::uint64_t seed) {
    TrainedGroupResult res;
    LayeredModel model = initial_model(cfg, m, seed);
    std::map<int, TrainBatch> data;
    for (int u : members) data[u] = m.train[u];

    if (members.size() == 1) {
        const int u = members.front();
        for (int r = 0; r < rounds; ++r)
            estimator::sgd_step(model, estimator::backward(model, data[u]), cfg.rl.learning_rate);
    } else {
        federation::FLGroup group;
        group.member_ids = members;
        const auto ctx = make_transfer_context(cfg, m, members);
        group.center_id = federation::select_center(members, ctx);
        federation::RoundOptions opt;
        opt.learning_rate = cfg.rl.learning_rate;
        for (int r = 0; r < rounds; ++r) {
            const auto report =
                federation::run_fl_round(group, model, data, cfg.strategy, ctx, opt);
            res.bytes_exchanged += report.bytes_exchanged;
        }
    }
    for (int u : members)
        res.user_nmse_linear[u] = estimator::mean_nmse_linear(model, m.eval[u]);
    return res;
}

// HFL over one group: one global/local pair, server data taken from the
// members' held-out slices.
inline TrainedGroupResult train_group_hfl(const ExperimentConfig& cfg,
                                          const MaterializedScenario& m,
                                          const std::vector<int>& members, int rounds,
                                          std::uint64_t seed) {
    TrainedGroupResult res;
    hfl::HflPair pair;
    pair.local_template = initial_model(cfg, m, seed);
    pair.global_model =
        estimator::make_global_model(m.pilot_length, m.output_dim, cfg.estimator_spec);
    Rng grng = Rng::stream(seed, 0x91017);
    nn::xavier_init(pair.global_model, grng);
    for (int u : members)
        for (std::size_t i = 0; i < m.eval[u].size(); i += 2) {
            pair.server_dataset.inputs.push_back(m.eval[u].inputs[i]);
            pair.server_dataset.targets.push_back(m.eval[u].targets[i]);
        }

    std::map<int, TrainBatch> data;
    for (int u : members) data[u] = m.train[u];
    hfl::HflRoundOptions opt;
    opt.local.learning_rate = cfg.rl.learning_rate;
    opt.distill.learning_rate = cfg.rl.learning_rate;
    opt.distill.max_epochs = 20;  // desk-scale cap per round
    const std::vector<double> beta(members.size(), 1.0);
    Rng rng = Rng::stream(seed, 0xd157);
    for (int r = 0; r < rounds; ++r) {
        const auto report = hfl::run_hfl_round(pair, members, data, beta, rng, opt);
        res.bytes_exchanged += (report.uplink_params + report.downlink_params) * sizeof(double);
    }
    for (int u : members)
        res.user_nmse_linear[u] = estimator::mean_nmse_linear(pair.local_template, m.eval[u]);
    return res;
}

// Trains every effective coalition of a partition independently and returns
// per-user linear NMSE.
inline TrainedGroupResult train_partitioned(const ExperimentConfig& cfg,
                                            const MaterializedScenario& m,
                                            const coalition::CoalitionPartition& partition,
                                            int rounds, std::uint64_t seed) {
    TrainedGroupResult total;
    const auto groups = partition.effective_coalitions();
    std::vector<TrainedGroupResult> results(groups.size());
    parallel_for(groups.size(), [&](std::size_t i) {
        results[i] = cfg.use_hfl ? train_group_hfl(cfg, m, groups[i], rounds, seed)
                                 : train_group_fl(cfg, m, groups[i], rounds, seed);
    });
    for (const auto& r : results) {
        total.bytes_exchanged += r.bytes_exchanged;
        for (const auto& [u, v] : r.user_nmse_linear) total.user_nmse_linear[u] = v;
    }
    return total;
}

// Correlation-guided partition via altruistic switch dynamics on the
// measured channel correlations.
inline coalition::CoalitionPartition correlation_partition(const ExperimentConfig& cfg,
                                                           const MaterializedScenario& m) {
    coalition::SurrogateOracle oracle(m.correlation);
    coalition::GameConfig game;
    coalition::CoalitionPartition init;
    init.max_coalitions = cfg.rl.max_coalitions;
    // start from one grand coalition: a singleton in a coalition looks exactly
    // like a solo user to the oracle, so the all-solo start never moves
    init.assignment.assign(static_cast<std::size_t>(cfg.scenario.num_users), 1);
    return coalition::switch_dynamics(init, oracle, game).partition;
}

// ---------------------------------------------------------------------------
// DRL environment backed by the real FL pipeline
// ---------------------------------------------------------------------------

class FlPipelineEnvironment : public drl::Environment {
public:
    FlPipelineEnvironment(const ExperimentConfig& cfg, MaterializedScenario scenario)
        : cfg_(cfg), scenario_(std::move(scenario)) {}

    std::vector<double> evaluate(const coalition::CoalitionPartition& partition) override {
        const auto res =
            train_partitioned(cfg_, scenario_, partition, cfg_.rounds_per_epoch, cfg_.seed);
        last_bytes_ = res.bytes_exchanged;
        std::vector<double> errors(static_cast<std::size_t>(partition.num_users()), 1.0);
        for (const auto& [u, v] : res.user_nmse_linear)
            errors[static_cast<std::size_t>(u)] = std::clamp(v, 0.0, 1.0);
        return errors;
    }

    std::size_t last_bytes_exchanged() const override { return last_bytes_; }

private:
    ExperimentConfig cfg_;
    MaterializedScenario scenario_;
    std::size_t last_bytes_ = 0;
};

// ---------------------------------------------------------------------------
// Experiment driver
// ---------------------------------------------------------------------------

struct SnrSweepRow {
    double snr_db = 0.0;
    double mean_nmse_linear = 0.0;
    double mean_nmse_db = 0.0;
};

inline SnrSweepRow single_group_nmse(const ExperimentConfig& cfg, double snr_db) {
    SnrSweepRow row;
    row.snr_db = snr_db;
    std::vector<double> per_seed(static_cast<std::size_t>(cfg.num_seeds));
    parallel_for(per_seed.size(), [&](std::size_t s) {
        const std::uint64_t seed = cfg.seed + s;
        const auto m = materialize(cfg, snr_db, seed);
        std::vector<int> all(static_cast<std::size_t>(cfg.scenario.num_users));
        std::iota(all.begin(), all.end(), 0);
        const auto res = train_group_fl(cfg, m, all, cfg.fl_rounds, seed);
        double acc = 0.0;
        for (const auto& [u, v] : res.user_nmse_linear) acc += v;
        per_seed[s] = acc / static_cast<double>(res.user_nmse_linear.size());
    });
    double acc = 0.0;
    for (double v : per_seed) acc += v;
    row.mean_nmse_linear = acc / static_cast<double>(per_seed.size());
    row.mean_nmse_db = 10.0 * std::log10(std::max(row.mean_nmse_linear, 1e-30));
    return row;
}

inline void run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    const auto out = [&](const std::string& name) { return cfg.out_dir + "/" + name; };

    const auto m = materialize(cfg, cfg.scenario.snr_db, cfg.seed);
    const int k = cfg.scenario.num_users;

    {
        io::CsvWriter csv(out("correlation_matrix.csv"));
        std::vector<std::string> header{"user"};
        for (int j = 0; j < k; ++j) header.push_back("u" + std::to_string(j));
        csv.row(header);
        for (int i = 0; i < k; ++i) {
            std::vector<std::string> cells{std::to_string(i)};
            for (int j = 0; j < k; ++j) cells.push_back(io::num(m.correlation[i][j]));
            csv.row(cells);
        }
    }

    coalition::SurrogateOracle oracle(m.correlation);
    coalition::GameConfig game;
    {
        coalition::CoalitionPartition init;
        init.max_coalitions = cfg.rl.max_coalitions;
        init.assignment.assign(static_cast<std::size_t>(k), 1);
        const auto res = coalition::switch_dynamics(init, oracle, game);
        io::CsvWriter csv(out("partition_trace.csv"));
        csv.row({"step", "user", "from", "to", "phi", "total_u"});
        for (const auto& e : res.trace)
            csv.values(e.step, e.user, e.from, e.to, io::num(e.phi), io::num(e.total_u));
    }

    {
        io::CsvWriter csv(out("reward_vs_epoch.csv"));
        csv.row({"epoch", "reward", "mean_error", "phi", "action"});
        if (cfg.backend == "switch") {
            coalition::CoalitionPartition init;
            init.max_coalitions = cfg.rl.max_coalitions;
            init.assignment.assign(static_cast<std::size_t>(k), 1);
            const auto res = coalition::switch_dynamics(init, oracle, game);
            coalition::CoalitionPartition p = init;
            int step = 0;
            for (const auto& e : res.trace) {
                p.assignment[static_cast<std::size_t>(e.user)] = e.to;
                const double reward = drl::reward_from_errors(oracle.errors(p));
                std::string action;
                for (int c : p.assignment) action += std::to_string(c);
                csv.values(step++, io::num(reward), io::num(1.0 - reward), io::num(e.phi), action);
            }
        } else {
            drl::CfflOptions rl = cfg.rl;
            rl.num_users = k;
            rl.seed = cfg.seed;
            const drl::Backend backend =
                cfg.backend == "dqn" ? drl::Backend::dqn : drl::Backend::qmix;
            std::unique_ptr<drl::Environment> env;
            if (cfg.oracle == "surrogate")
                env = std::make_unique<drl::SurrogateEnvironment>(oracle);
            else
                env = std::make_unique<FlPipelineEnvironment>(cfg, m);
            const auto history = drl::run_cffl(rl, backend, *env);
            for (const auto& rec : history) {
                coalition::CoalitionPartition p;
                p.max_coalitions = cfg.rl.max_coalitions;
                p.assignment = rec.action;
                std::string action;
                for (int c : rec.action) action += std::to_string(c);
                csv.values(rec.epoch, io::num(rec.reward), io::num(rec.mean_error),
                           io::num(coalition::potential(p, oracle, game)), action);
            }
        }
    }

    {
        io::CsvWriter csv(out("nmse_vs_snr.csv"));
        csv.row({"snr_db", "mean_nmse_linear", "mean_nmse_db"});
        for (double snr : cfg.snr_list) {
            const auto row = single_group_nmse(cfg, snr);
            csv.values(io::num(row.snr_db), io::num(row.mean_nmse_linear),
                       io::num(row.mean_nmse_db));
        }
    }

    {
        const LayeredModel local =
            estimator::make_local_model(m.pilot_length, m.output_dim, cfg.estimator_spec);
        const LayeredModel global =
            estimator::make_global_model(m.pilot_length, m.output_dim, cfg.estimator_spec);
        metrics::OverheadInputs in;
        in.users = static_cast<std::uint64_t>(k);
        in.w_fl = metrics::model_accounting(global).params;  // homogeneous FL ships the big model
        in.w_hfl = local.shared_param_count();               // HFL ships the shared part only
        in.rounds_per_epoch = static_cast<std::uint64_t>(cfg.rounds_per_epoch);
        in.epochs = static_cast<std::uint64_t>(cfg.rl.epochs);
        in.observation = static_cast<std::uint64_t>(drl::state_dim(k, cfg.rl.max_coalitions));
        in.action = static_cast<std::uint64_t>((cfg.rl.max_coalitions + 1) * k);
        in.policy = static_cast<std::uint64_t>((cfg.rl.max_coalitions + 1) * k);
        in.max_coalitions = static_cast<std::uint64_t>(cfg.rl.max_coalitions);

        io::CsvWriter csv(out("overhead.csv"));
        // flop convention: 2 flops per multiply-accumulate
        csv.row({"algo", "per_round_params", "per_epoch_params", "total_params"});
        for (const auto algo : {metrics::OverheadAlgo::dqn_fl, metrics::OverheadAlgo::dqn_hfl,
                                metrics::OverheadAlgo::qmix_fl, metrics::OverheadAlgo::qmix_hfl}) {
            const auto o = metrics::comm_overhead(algo, in);
            csv.values(metrics::to_string(algo), o.per_round, o.per_epoch, o.total);
        }
    }

    {
        std::ofstream man(out("manifest.txt"));
        man << "config_hash: " << config::config_hash(cfg) << "\n"
            << "seed: " << cfg.seed << "\n"
            << "code_version: 1\n";
    }
}

struct CompareRow {
    std::string strategy;
    double snr_db = 0.0;
    double mean_nmse_linear = 0.0;
    double std_nmse_linear = 0.0;
};

inline std::vector<CompareRow> compare_strategies(const ExperimentConfig& base,
                                                  const std::vector<std::string>& strategies) {
    if (strategies.size() < 2)
        throw std::invalid_argument("compare_strategies: need at least two strategies");
    std::vector<CompareRow> rows;
    for (const auto& strat : strategies) {
        for (double snr : base.snr_list) {
            std::vector<double> per_seed(static_cast<std::size_t>(base.num_seeds));
            parallel_for(per_seed.size(), [&](std::size_t s) {
                const std::uint64_t seed = base.seed + s;
                ExperimentConfig cfg = base;
                if (strat != "coalition") cfg.strategy = federation::strategy_from_string(strat);
                const auto m = materialize(cfg, snr, seed);
                coalition::CoalitionPartition partition;
                partition.max_coalitions = cfg.rl.max_coalitions;
                if (strat == "coalition") {
                    partition = correlation_partition(cfg, m);
                } else {
                    partition.assignment.assign(
                        static_cast<std::size_t>(cfg.scenario.num_users), 1);
                }
                const auto res = train_partitioned(cfg, m, partition, cfg.fl_rounds, seed);
                double acc = 0.0;
                for (const auto& [u, v] : res.user_nmse_linear) acc += v;
                per_seed[s] = acc / static_cast<double>(res.user_nmse_linear.size());
            });
            CompareRow row;
            row.strategy = strat;
            row.snr_db = snr;
            double mean = 0.0;
            for (double v : per_seed) mean += v;
            mean /= static_cast<double>(per_seed.size());
            double var = 0.0;
            for (double v : per_seed) var += (v - mean) * (v - mean);
            row.mean_nmse_linear = mean;
            row.std_nmse_linear = std::sqrt(var / per_seed.size());
            rows.push_back(row);
        }
    }
    return rows;
}

}  // namespace cffl::experiment

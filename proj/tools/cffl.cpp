#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cffl/experiment.hpp"

namespace {

using cffl::config::ExperimentConfig;

struct CommonArgs {
    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string out_dir;
    std::string backend;
    std::string oracle;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "JSON config file");
    cmd->add_option("--seed", args.seed, "master seed (overrides config)")
        ->each([&args](const std::string&) { args.seed_set = true; });
    cmd->add_option("--out", args.out_dir, "output directory (overrides config)");
    cmd->add_option("--backend", args.backend, "coalition search backend")
        ->check(CLI::IsMember({"dqn", "qmix", "switch"}));
    cmd->add_option("--oracle", args.oracle, "coalition error oracle")
        ->check(CLI::IsMember({"fl", "surrogate"}));
}

ExperimentConfig resolve(const CommonArgs& args) {
    ExperimentConfig cfg;
    if (!args.config_path.empty()) cfg = cffl::config::load(args.config_path);
    if (args.seed_set) {
        cfg.seed = args.seed;
        cfg.rl.seed = args.seed;
        cfg.scenario.seed = args.seed;
    } else {
        cfg.scenario.seed = cfg.seed;
    }
    if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
    if (!args.backend.empty()) cfg.backend = args.backend;
    if (!args.oracle.empty()) cfg.oracle = args.oracle;
    cfg.validate();
    return cfg;
}

int cmd_generate(const CommonArgs& args) {
    const ExperimentConfig cfg = resolve(args);
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    cffl::channel::ScenarioConfig sc = cfg.scenario;
    const auto datasets = cffl::channel::generate_scenario(sc);
    std::vector<cffl::channel::PilotDataset> loaded;
    for (const auto& ds : datasets) {
        const std::string path = cfg.out_dir + "/user" + std::to_string(ds.user_id) + ".cfld";
        cffl::io::save_dataset(path, ds);
        std::cout << "wrote " << path << " (" << ds.samples.size() << " samples)\n";
    }
    return 0;
}

int cmd_train(const CommonArgs& args) {
    const ExperimentConfig cfg = resolve(args);
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    const auto m = cffl::experiment::materialize(cfg, cfg.scenario.snr_db, cfg.seed);

    std::vector<int> all(static_cast<std::size_t>(cfg.scenario.num_users));
    std::iota(all.begin(), all.end(), 0);
    const auto res = cfg.use_hfl
                         ? cffl::experiment::train_group_hfl(cfg, m, all, cfg.fl_rounds, cfg.seed)
                         : cffl::experiment::train_group_fl(cfg, m, all, cfg.fl_rounds, cfg.seed);

    cffl::io::CsvWriter csv(cfg.out_dir + "/train_nmse.csv");
    csv.row({"user", "nmse_linear", "nmse_db"});
    for (const auto& [u, v] : res.user_nmse_linear) {
        csv.values(u, cffl::io::num(v), cffl::io::num(10.0 * std::log10(std::max(v, 1e-30))));
        std::cout << "user " << u << " nmse " << 10.0 * std::log10(std::max(v, 1e-30)) << " dB\n";
    }

    const auto model = cffl::experiment::initial_model(cfg, m, cfg.seed);
    cffl::io::save_model(cfg.out_dir + "/model.cflm", model);
    return 0;
}

int cmd_game(const CommonArgs& args) {
    const ExperimentConfig cfg = resolve(args);
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    const auto m = cffl::experiment::materialize(cfg, cfg.scenario.snr_db, cfg.seed);
    cffl::coalition::SurrogateOracle oracle(m.correlation);
    cffl::coalition::GameConfig game;
    cffl::coalition::CoalitionPartition init;
    init.max_coalitions = cfg.rl.max_coalitions;
    init.assignment.assign(static_cast<std::size_t>(cfg.scenario.num_users), 1);
    const auto res = cffl::coalition::switch_dynamics(init, oracle, game);

    cffl::io::CsvWriter csv(cfg.out_dir + "/partition_trace.csv");
    csv.row({"step", "user", "from", "to", "phi", "total_u"});
    for (const auto& e : res.trace)
        csv.values(e.step, e.user, e.from, e.to, cffl::io::num(e.phi), cffl::io::num(e.total_u));

    std::cout << "converged: " << (res.converged ? "yes" : "no") << "\nfinal partition:";
    for (int c : res.partition.assignment) std::cout << ' ' << c;
    std::cout << "\nphi: "
              << cffl::coalition::potential(res.partition, oracle, game) << "\n";
    return 0;
}

int cmd_cffl(const CommonArgs& args) {
    const ExperimentConfig cfg = resolve(args);
    cffl::experiment::run_experiment(cfg);
    std::cout << "outputs written to " << cfg.out_dir << "\n";
    return 0;
}

int cmd_overhead(const CommonArgs& args) {
    const ExperimentConfig cfg = resolve(args);
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    const int output_dim = 2 * cfg.scenario.ris_geom.size() * cfg.scenario.cascaded_cols();
    const auto local = cffl::estimator::make_local_model(cfg.scenario.pilot_length, output_dim,
                                                         cfg.estimator_spec);
    const auto global = cffl::estimator::make_global_model(cfg.scenario.pilot_length, output_dim,
                                                           cfg.estimator_spec);
    cffl::metrics::OverheadInputs in;
    in.users = static_cast<std::uint64_t>(cfg.scenario.num_users);
    in.w_fl = cffl::metrics::model_accounting(global).params;
    in.w_hfl = local.shared_param_count();
    in.rounds_per_epoch = static_cast<std::uint64_t>(cfg.rounds_per_epoch);
    in.epochs = static_cast<std::uint64_t>(cfg.rl.epochs);
    in.observation = static_cast<std::uint64_t>(
        cffl::drl::state_dim(cfg.scenario.num_users, cfg.rl.max_coalitions));
    in.action = static_cast<std::uint64_t>((cfg.rl.max_coalitions + 1) * cfg.scenario.num_users);
    in.policy = in.action;
    in.max_coalitions = static_cast<std::uint64_t>(cfg.rl.max_coalitions);

    cffl::io::CsvWriter csv(cfg.out_dir + "/overhead.csv");
    csv.row({"algo", "per_round_params", "per_epoch_params", "total_params"});
    for (const auto algo :
         {cffl::metrics::OverheadAlgo::dqn_fl, cffl::metrics::OverheadAlgo::dqn_hfl,
          cffl::metrics::OverheadAlgo::qmix_fl, cffl::metrics::OverheadAlgo::qmix_hfl}) {
        const auto o = cffl::metrics::comm_overhead(algo, in);
        csv.values(cffl::metrics::to_string(algo), o.per_round, o.per_epoch, o.total);
        std::cout << cffl::metrics::to_string(algo) << " total " << o.total << " params\n";
    }
    std::cout << "local flops/forward: " << cffl::metrics::model_accounting(local).flops_per_forward
              << "\nglobal flops/forward: "
              << cffl::metrics::model_accounting(global).flops_per_forward << "\n";
    return 0;
}

int cmd_compare(const CommonArgs& args, const std::vector<std::string>& strategies) {
    const ExperimentConfig cfg = resolve(args);
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    const auto rows = cffl::experiment::compare_strategies(cfg, strategies);
    cffl::io::CsvWriter csv(cfg.out_dir + "/compare.csv");
    csv.row({"strategy", "snr_db", "mean_nmse_linear", "std_nmse_linear"});
    for (const auto& r : rows) {
        csv.values(r.strategy, cffl::io::num(r.snr_db), cffl::io::num(r.mean_nmse_linear),
                   cffl::io::num(r.std_nmse_linear));
        std::cout << r.strategy << " @ " << r.snr_db << " dB: " << r.mean_nmse_linear << " +/- "
                  << r.std_nmse_linear << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"coalition-formation federated channel estimation toolkit"};
    app.require_subcommand(1);

    CommonArgs generate_args, train_args, game_args, cffl_args, overhead_args, compare_args;
    std::vector<std::string> strategies{"plain", "coalition"};

    add_common(app.add_subcommand("generate", "synthesize pilot datasets"), generate_args);
    add_common(app.add_subcommand("train", "train estimators with FL/HFL"), train_args);
    add_common(app.add_subcommand("game", "run coalition switch dynamics"), game_args);
    add_common(app.add_subcommand("cffl", "full coalition-formation FL experiment"), cffl_args);
    add_common(app.add_subcommand("overhead", "communication/computation accounting"),
               overhead_args);
    CLI::App* compare = app.add_subcommand("compare", "compare transfer strategies");
    add_common(compare, compare_args);
    compare->add_option("--strategies", strategies,
                        "strategies to compare (plain, dis, rsrp_dis, coalition)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand("generate")) return cmd_generate(generate_args);
        if (app.got_subcommand("train")) return cmd_train(train_args);
        if (app.got_subcommand("game")) return cmd_game(game_args);
        if (app.got_subcommand("cffl")) return cmd_cffl(cffl_args);
        if (app.got_subcommand("overhead")) return cmd_overhead(overhead_args);
        if (app.got_subcommand("compare")) return cmd_compare(compare_args, strategies);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

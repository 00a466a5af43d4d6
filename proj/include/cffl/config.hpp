#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cffl/channel.hpp"
#include "cffl/drl.hpp"
#include "cffl/estimator.hpp"
#include "cffl/federation.hpp"

namespace cffl::config {

using nlohmann::json;

struct ExperimentConfig {
    channel::ScenarioConfig scenario;
    estimator::EstimatorSpec estimator_spec;
    federation::Strategy strategy = federation::Strategy::plain;
    bool use_hfl = false;
    std::string backend = "switch";   // switch | dqn | qmix
    std::string oracle = "surrogate"; // fl | surrogate
    drl::CfflOptions rl;
    int rounds_per_epoch = 5;  // E
    int fl_rounds = 30;        // round budget for strategy comparisons
    std::vector<double> snr_list = {0.0, 5.0, 10.0, 15.0};
    int num_seeds = 5;
    double eval_fraction = 0.2;  // held-out tail of each user's dataset
    double reference_distance = 100.0;
    double power_band = 1.0;
    std::uint64_t seed = 1;
    std::string out_dir = "out";

    void validate() const {
        scenario.validate();
        if (rounds_per_epoch < 0 || fl_rounds < 0)
            throw std::invalid_argument("config: round counts must be nonnegative");
        if (num_seeds < 1) throw std::invalid_argument("config: num_seeds must be >= 1");
        if (!(eval_fraction > 0.0 && eval_fraction < 1.0))
            throw std::invalid_argument("config: eval_fraction must be in (0,1)");
        if (backend != "switch" && backend != "dqn" && backend != "qmix")
            throw std::invalid_argument("config: unknown backend " + backend);
        if (oracle != "fl" && oracle != "surrogate")
            throw std::invalid_argument("config: unknown oracle " + oracle);
    }
};

inline json to_json(const channel::ArrayGeometry& g) {
    return {{"n1", g.n1}, {"n2", g.n2}, {"wavelength", g.wavelength}, {"spacing", g.spacing}};
}

inline channel::ArrayGeometry geometry_from_json(const json& j) {
    channel::ArrayGeometry g;
    g.n1 = j.at("n1").get<int>();
    g.n2 = j.at("n2").get<int>();
    g.wavelength = j.at("wavelength").get<double>();
    g.spacing = j.value("spacing", g.wavelength / 2.0);
    return g;
}

inline json to_json(const ExperimentConfig& c) {
    json j;
    j["scenario"] = {{"num_bs", c.scenario.num_bs},
                     {"num_users", c.scenario.num_users},
                     {"bs_geom", to_json(c.scenario.bs_geom)},
                     {"ris_geom", to_json(c.scenario.ris_geom)},
                     {"pilot_length", c.scenario.pilot_length},
                     {"samples_per_user", c.scenario.samples_per_user},
                     {"snr_db", c.scenario.snr_db},
                     {"layout", channel::to_string(c.scenario.layout)},
                     {"paths_bs_ris", c.scenario.paths_bs_ris},
                     {"paths_ris_ue", c.scenario.paths_ris_ue},
                     {"angle_perturbation", c.scenario.angle_perturbation},
                     {"sample_jitter", c.scenario.sample_jitter}};
    j["estimator"] = {{"channels", c.estimator_spec.channels},
                      {"kernel", c.estimator_spec.kernel},
                      {"local_conv_blocks", c.estimator_spec.local_conv_blocks},
                      {"global_conv_blocks", c.estimator_spec.global_conv_blocks}};
    j["strategy"] = federation::to_string(c.strategy);
    j["use_hfl"] = c.use_hfl;
    j["backend"] = c.backend;
    j["oracle"] = c.oracle;
    j["rl"] = {{"epochs", c.rl.epochs},
               {"gamma", c.rl.gamma},
               {"learning_rate", c.rl.learning_rate},
               {"batch_size", c.rl.batch_size},
               {"target_sync", c.rl.target_sync},
               {"replay_capacity", c.rl.replay_capacity},
               {"eps_start", c.rl.eps_start},
               {"eps_end", c.rl.eps_end},
               {"eps_fraction", c.rl.eps_fraction},
               {"hidden", c.rl.hidden},
               {"mix_hidden", c.rl.mix_hidden},
               {"full_size_obs", c.rl.full_size_obs},
               {"max_coalitions", c.rl.max_coalitions}};
    j["rounds_per_epoch"] = c.rounds_per_epoch;
    j["fl_rounds"] = c.fl_rounds;
    j["snr_list"] = c.snr_list;
    j["num_seeds"] = c.num_seeds;
    j["eval_fraction"] = c.eval_fraction;
    j["reference_distance"] = c.reference_distance;
    j["power_band"] = c.power_band;
    j["seed"] = c.seed;
    j["out_dir"] = c.out_dir;
    return j;
}

inline ExperimentConfig from_json(const json& j) {
    ExperimentConfig c;
    if (j.contains("scenario")) {
        const json& s = j.at("scenario");
        c.scenario.num_bs = s.value("num_bs", c.scenario.num_bs);
        c.scenario.num_users = s.value("num_users", c.scenario.num_users);
        if (s.contains("bs_geom")) c.scenario.bs_geom = geometry_from_json(s.at("bs_geom"));
        if (s.contains("ris_geom")) c.scenario.ris_geom = geometry_from_json(s.at("ris_geom"));
        c.scenario.pilot_length = s.value("pilot_length", c.scenario.pilot_length);
        c.scenario.samples_per_user = s.value("samples_per_user", c.scenario.samples_per_user);
        c.scenario.snr_db = s.value("snr_db", c.scenario.snr_db);
        if (s.contains("layout"))
            c.scenario.layout = channel::layout_from_string(s.at("layout").get<std::string>());
        c.scenario.paths_bs_ris = s.value("paths_bs_ris", c.scenario.paths_bs_ris);
        c.scenario.paths_ris_ue = s.value("paths_ris_ue", c.scenario.paths_ris_ue);
        c.scenario.angle_perturbation = s.value("angle_perturbation", c.scenario.angle_perturbation);
        c.scenario.sample_jitter = s.value("sample_jitter", c.scenario.sample_jitter);
    }
    if (j.contains("estimator")) {
        const json& e = j.at("estimator");
        c.estimator_spec.channels = e.value("channels", c.estimator_spec.channels);
        c.estimator_spec.kernel = e.value("kernel", c.estimator_spec.kernel);
        c.estimator_spec.local_conv_blocks =
            e.value("local_conv_blocks", c.estimator_spec.local_conv_blocks);
        c.estimator_spec.global_conv_blocks =
            e.value("global_conv_blocks", c.estimator_spec.global_conv_blocks);
    }
    if (j.contains("strategy"))
        c.strategy = federation::strategy_from_string(j.at("strategy").get<std::string>());
    c.use_hfl = j.value("use_hfl", c.use_hfl);
    c.backend = j.value("backend", c.backend);
    c.oracle = j.value("oracle", c.oracle);
    if (j.contains("rl")) {
        const json& r = j.at("rl");
        c.rl.epochs = r.value("epochs", c.rl.epochs);
        c.rl.gamma = r.value("gamma", c.rl.gamma);
        c.rl.learning_rate = r.value("learning_rate", c.rl.learning_rate);
        c.rl.batch_size = r.value("batch_size", c.rl.batch_size);
        c.rl.target_sync = r.value("target_sync", c.rl.target_sync);
        c.rl.replay_capacity = r.value("replay_capacity", c.rl.replay_capacity);
        c.rl.eps_start = r.value("eps_start", c.rl.eps_start);
        c.rl.eps_end = r.value("eps_end", c.rl.eps_end);
        c.rl.eps_fraction = r.value("eps_fraction", c.rl.eps_fraction);
        c.rl.hidden = r.value("hidden", c.rl.hidden);
        c.rl.mix_hidden = r.value("mix_hidden", c.rl.mix_hidden);
        c.rl.full_size_obs = r.value("full_size_obs", c.rl.full_size_obs);
        c.rl.max_coalitions = r.value("max_coalitions", c.rl.max_coalitions);
    }
    c.rounds_per_epoch = j.value("rounds_per_epoch", c.rounds_per_epoch);
    c.fl_rounds = j.value("fl_rounds", c.fl_rounds);
    if (j.contains("snr_list")) c.snr_list = j.at("snr_list").get<std::vector<double>>();
    c.num_seeds = j.value("num_seeds", c.num_seeds);
    c.eval_fraction = j.value("eval_fraction", c.eval_fraction);
    c.reference_distance = j.value("reference_distance", c.reference_distance);
    c.power_band = j.value("power_band", c.power_band);
    c.seed = j.value("seed", c.seed);
    c.out_dir = j.value("out_dir", c.out_dir);

    // keep RL user/coalition counts tied to the scenario
    c.rl.num_users = c.scenario.num_users;
    c.rl.seed = c.seed;
    return c;
}

inline std::string serialize(const ExperimentConfig& c) { return to_json(c).dump(2) + "\n"; }

inline ExperimentConfig parse(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(std::string("config parse error: ") + e.what());
    }
    ExperimentConfig c = from_json(j);
    c.validate();
    return c;
}

inline ExperimentConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("config: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

// FNV-1a over the canonical serialization, used in run manifests.
inline std::uint64_t config_hash(const ExperimentConfig& c) {
    const std::string s = serialize(c);
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace cffl::config

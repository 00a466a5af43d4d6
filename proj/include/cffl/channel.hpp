#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "cffl/rng.hpp"

namespace cffl::channel {

using Eigen::MatrixXcd;
using Eigen::RowVectorXcd;
using Eigen::VectorXcd;
using cd = std::complex<double>;

// Sentinel for a noiseless pilot draw.
inline constexpr double kNoiselessSnrDb = std::numeric_limits<double>::infinity();

struct ArrayGeometry {
    int n1 = 1;
    int n2 = 1;
    double wavelength = 1.0;
    double spacing = 0.5;  // defaults to wavelength/2 via make()

    static ArrayGeometry make(int n1, int n2, double wavelength) {
        return {n1, n2, wavelength, wavelength / 2.0};
    }

    int size() const { return n1 * n2; }

    void validate() const {
        if (n1 < 1 || n2 < 1) throw std::invalid_argument("ArrayGeometry: element counts must be >= 1");
        if (!(spacing > 0.0)) throw std::invalid_argument("ArrayGeometry: spacing must be > 0");
        if (!(wavelength > 0.0)) throw std::invalid_argument("ArrayGeometry: wavelength must be > 0");
    }
};

struct Path {
    cd gain;
    double azimuth = 0.0;    // radians
    double elevation = 0.0;  // radians
};

struct PathSet {
    std::vector<Path> paths;
    std::size_t count() const { return paths.size(); }
};

// Cascaded channel h = diag(v^H) G, shape N x (N_t * B).
struct CascadedChannel {
    MatrixXcd matrix;
};

struct PilotConfig {
    MatrixXcd ris_phases;  // pilot_length x N, unit-modulus entries
    VectorXcd beamformer;  // (N_t * B) x 1
    cd pilot_symbol{1.0, 0.0};

    int pilot_length() const { return static_cast<int>(ris_phases.rows()); }

    void validate() const {
        for (int t = 0; t < ris_phases.rows(); ++t)
            for (int n = 0; n < ris_phases.cols(); ++n)
                if (std::abs(std::abs(ris_phases(t, n)) - 1.0) > 1e-9)
                    throw std::invalid_argument("PilotConfig: RIS phases must be unit-modulus");
        if (!(beamformer.norm() > 0.0) || !std::isfinite(beamformer.norm()))
            throw std::invalid_argument("PilotConfig: beamformer norm must be finite and nonzero");
    }
};

struct PilotSample {
    VectorXcd received;  // length pilot_length
    CascadedChannel truth;
    double snr_db = 0.0;
};

struct PilotDataset {
    int user_id = 0;
    std::vector<PilotSample> samples;
};

// Uniform planar array steering vector: kron of the two axis phase ramps,
// scaled by 1/sqrt(N).
inline VectorXcd steering_vector(const ArrayGeometry& geom, double azimuth, double elevation) {
    geom.validate();
    const int n = geom.size();
    const double c1 = 2.0 * M_PI * geom.spacing * std::cos(elevation) / geom.wavelength;
    const double c2 = 2.0 * M_PI * geom.spacing * std::sin(elevation) * std::cos(azimuth) / geom.wavelength;
    VectorXcd out(n);
    const double scale = 1.0 / std::sqrt(static_cast<double>(n));
    for (int i = 0; i < geom.n1; ++i) {
        const cd p1 = std::polar(1.0, -c1 * i);
        for (int j = 0; j < geom.n2; ++j) {
            out(i * geom.n2 + j) = scale * p1 * std::polar(1.0, -c2 * j);
        }
    }
    return out;
}

// BS b -> RIS channel: sqrt(N_t*N/L) * sum_l alpha_l a(rx) u_b(tx)^T.
// Each path carries both endpoints' angles: (rx azimuth, rx elevation,
// tx azimuth, tx elevation).
struct BsRisPath {
    cd gain;
    double rx_azimuth = 0.0;
    double rx_elevation = 0.0;
    double tx_azimuth = 0.0;
    double tx_elevation = 0.0;
};

struct BsRisPathSet {
    std::vector<BsRisPath> paths;
};

inline MatrixXcd bs_ris_channel(const ArrayGeometry& bs_geom, const ArrayGeometry& ris_geom,
                                const BsRisPathSet& paths) {
    if (paths.paths.empty()) throw std::invalid_argument("bs_ris_channel: empty path set");
    const int n = ris_geom.size();
    const int nt = bs_geom.size();
    MatrixXcd g = MatrixXcd::Zero(n, nt);
    for (const auto& p : paths.paths) {
        VectorXcd a = steering_vector(ris_geom, p.rx_azimuth, p.rx_elevation);
        VectorXcd u = steering_vector(bs_geom, p.tx_azimuth, p.tx_elevation);
        g.noalias() += p.gain * (a * u.transpose());
    }
    const double scale = std::sqrt(static_cast<double>(nt) * n / static_cast<double>(paths.paths.size()));
    return scale * g;
}

// RIS -> UE channel row vector, Eq-style sqrt(N/L) * sum_l alpha_l a(az, el)^T.
inline RowVectorXcd ris_ue_channel(const ArrayGeometry& ris_geom, const PathSet& paths) {
    if (paths.paths.empty()) throw std::invalid_argument("ris_ue_channel: empty path set");
    const int n = ris_geom.size();
    RowVectorXcd v = RowVectorXcd::Zero(n);
    for (const auto& p : paths.paths) {
        v += p.gain * steering_vector(ris_geom, p.azimuth, p.elevation).transpose();
    }
    const double scale = std::sqrt(static_cast<double>(n) / static_cast<double>(paths.paths.size()));
    return scale * v;
}

// h = diag(v^H) G: row n of the result is conj(v[n]) times row n of G.
inline CascadedChannel cascade(const RowVectorXcd& v, const MatrixXcd& g_all) {
    if (v.cols() != g_all.rows()) throw std::invalid_argument("cascade: shape mismatch");
    MatrixXcd h(g_all.rows(), g_all.cols());
    for (int n = 0; n < g_all.rows(); ++n) h.row(n) = std::conj(v(n)) * g_all.row(n);
    return {std::move(h)};
}

// y_t = phi_t * h * F * s + n_t. Noise variance is set so the sample SNR
// matches snr_db against the mean noiseless symbol power; an all-zero signal
// falls back to unit reference power so the noise-only case stays meaningful.
inline PilotSample received_pilots(const CascadedChannel& h, const PilotConfig& cfg, double snr_db,
                                   Rng& rng) {
    const int tlen = cfg.pilot_length();
    VectorXcd clean(tlen);
    const VectorXcd hf = h.matrix * cfg.beamformer;
    for (int t = 0; t < tlen; ++t) clean(t) = (cfg.ris_phases.row(t) * hf)(0) * cfg.pilot_symbol;

    PilotSample sample;
    sample.truth = h;
    sample.snr_db = snr_db;
    if (std::isinf(snr_db)) {
        sample.received = clean;
        return sample;
    }
    double sig_power = clean.squaredNorm() / tlen;
    if (sig_power <= 0.0) sig_power = 1.0;
    const double noise_var = sig_power * std::pow(10.0, -snr_db / 10.0);
    const double noise_std = std::sqrt(noise_var);
    VectorXcd noisy(tlen);
    for (int t = 0; t < tlen; ++t) noisy(t) = clean(t) + noise_std * rng.complex_normal();
    sample.received = noisy;
    return sample;
}

enum class UserLayout { sparse, dense, two_cluster };

inline std::string to_string(UserLayout l) {
    switch (l) {
        case UserLayout::sparse: return "sparse";
        case UserLayout::dense: return "dense";
        default: return "two_cluster";
    }
}

inline UserLayout layout_from_string(const std::string& s) {
    if (s == "sparse") return UserLayout::sparse;
    if (s == "dense") return UserLayout::dense;
    if (s == "two_cluster") return UserLayout::two_cluster;
    throw std::invalid_argument("unknown user layout: " + s);
}

struct ScenarioConfig {
    int num_bs = 2;
    int num_users = 6;
    ArrayGeometry bs_geom = ArrayGeometry::make(2, 2, 1.0);
    ArrayGeometry ris_geom = ArrayGeometry::make(4, 4, 1.0);
    int pilot_length = 32;
    int samples_per_user = 4000;
    double snr_db = 10.0;
    UserLayout layout = UserLayout::two_cluster;
    int paths_bs_ris = 3;
    int paths_ris_ue = 3;
    double angle_perturbation = 0.05;  // per-user offset from the cluster base
    double sample_jitter = 0.05;       // per-sample gain jitter
    std::uint64_t seed = 1;

    int cascaded_cols() const { return num_bs * bs_geom.size(); }

    void validate() const {
        bs_geom.validate();
        ris_geom.validate();
        if (num_bs < 1 || num_users < 1) throw std::invalid_argument("scenario: counts must be positive");
        if (pilot_length < 1 || samples_per_user < 1)
            throw std::invalid_argument("scenario: pilot length and sample count must be positive");
        if (paths_bs_ris < 1 || paths_ris_ue < 1)
            throw std::invalid_argument("scenario: path counts must be >= 1");
    }
};

inline int cluster_of_user(UserLayout layout, int user, int num_users) {
    switch (layout) {
        case UserLayout::sparse: return user;
        case UserLayout::dense: return 0;
        case UserLayout::two_cluster: return user < num_users / 2 ? 0 : 1;
    }
    return 0;
}

// Fixed measurement setup shared by all samples of a scenario: one RIS phase
// pattern across the pilot symbols and one beamformer per user.
struct ScenarioMeasurement {
    MatrixXcd ris_phases;
    std::vector<VectorXcd> beamformers;
    cd pilot_symbol{1.0, 0.0};

    PilotConfig config_for(int user) const {
        return PilotConfig{ris_phases, beamformers.at(user), pilot_symbol};
    }
};

inline ScenarioMeasurement make_measurement(const ScenarioConfig& cfg) {
    ScenarioMeasurement m;
    Rng rng = Rng::stream(cfg.seed, 0xfee1);
    m.ris_phases.resize(cfg.pilot_length, cfg.ris_geom.size());
    for (int t = 0; t < cfg.pilot_length; ++t)
        for (int n = 0; n < cfg.ris_geom.size(); ++n) m.ris_phases(t, n) = rng.unit_phase();
    m.beamformers.resize(cfg.num_users);
    for (int k = 0; k < cfg.num_users; ++k) {
        VectorXcd f(cfg.cascaded_cols());
        for (int i = 0; i < f.size(); ++i) f(i) = rng.complex_normal();
        f /= f.norm();
        m.beamformers[k] = f;
    }
    return m;
}

// Stacked BS-RIS channel G = [G_1, ..., G_B], drawn once per scenario.
inline MatrixXcd make_stacked_bs_ris(const ScenarioConfig& cfg) {
    Rng rng = Rng::stream(cfg.seed, 0xbee5);
    MatrixXcd g(cfg.ris_geom.size(), cfg.cascaded_cols());
    for (int b = 0; b < cfg.num_bs; ++b) {
        BsRisPathSet ps;
        for (int l = 0; l < cfg.paths_bs_ris; ++l) {
            BsRisPath p;
            p.gain = rng.complex_normal();
            p.rx_azimuth = rng.uniform(0.0, 2.0 * M_PI);
            p.rx_elevation = rng.uniform(0.0, M_PI);
            p.tx_azimuth = rng.uniform(0.0, 2.0 * M_PI);
            p.tx_elevation = rng.uniform(0.0, M_PI);
            ps.paths.push_back(p);
        }
        g.middleCols(b * cfg.bs_geom.size(), cfg.bs_geom.size()) =
            bs_ris_channel(cfg.bs_geom, cfg.ris_geom, ps);
    }
    return g;
}

// Base RIS-UE path set of a geographic cluster plus this user's fixed offset.
inline PathSet user_base_paths(const ScenarioConfig& cfg, int user) {
    const int cluster = cluster_of_user(cfg.layout, user, cfg.num_users);
    Rng cluster_rng = Rng::stream(cfg.seed, 0xc1a5 + static_cast<std::uint64_t>(cluster));
    PathSet base;
    for (int l = 0; l < cfg.paths_ris_ue; ++l) {
        Path p;
        p.gain = cluster_rng.complex_normal();
        p.azimuth = cluster_rng.uniform(0.0, 2.0 * M_PI);
        p.elevation = cluster_rng.uniform(0.0, M_PI);
        base.paths.push_back(p);
    }
    Rng user_rng = Rng::stream(cfg.seed, 0x05e4 + static_cast<std::uint64_t>(user));
    for (auto& p : base.paths) {
        p.azimuth += user_rng.uniform(-cfg.angle_perturbation, cfg.angle_perturbation);
        p.elevation += user_rng.uniform(-cfg.angle_perturbation, cfg.angle_perturbation);
        p.gain += cfg.angle_perturbation * user_rng.complex_normal();
    }
    return base;
}

inline std::vector<PilotDataset> generate_scenario(const ScenarioConfig& cfg) {
    cfg.validate();
    const MatrixXcd g_all = make_stacked_bs_ris(cfg);
    const ScenarioMeasurement meas = make_measurement(cfg);

    std::vector<PilotDataset> out(cfg.num_users);
    for (int k = 0; k < cfg.num_users; ++k) {
        const PathSet base = user_base_paths(cfg, k);
        const PilotConfig pc = meas.config_for(k);
        Rng rng = Rng::stream(cfg.seed, 0xda7a + static_cast<std::uint64_t>(k));
        PilotDataset ds;
        ds.user_id = k;
        ds.samples.reserve(cfg.samples_per_user);
        for (int s = 0; s < cfg.samples_per_user; ++s) {
            PathSet jittered = base;
            for (auto& p : jittered.paths) p.gain += cfg.sample_jitter * rng.complex_normal();
            const RowVectorXcd w = ris_ue_channel(cfg.ris_geom, jittered);  // this is v^H
            // diag(v^H) G == cascade(conj(v^H), G) with cascade's own conjugation
            CascadedChannel h = cascade(w.conjugate(), g_all);
            ds.samples.push_back(received_pilots(h, pc, cfg.snr_db, rng));
        }
        out[k] = std::move(ds);
    }
    return out;
}

}  // namespace cffl::channel

#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cffl/channel.hpp"
#include "cffl/nn.hpp"

namespace cffl::io {

// Assumes a little-endian host; doubles are written raw.

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}
inline void write_f64(std::ostream& os, double v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline double read_f64(std::istream& is) {
    double v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}
inline void write_f64s(std::ostream& os, const std::vector<double>& v) {
    os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * 8));
}
inline void read_f64s(std::istream& is, std::vector<double>& v) {
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * 8));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Pilot dataset: 16-byte header (magic, version, N, N_t*B) + f64 payload,
// plus a sidecar text manifest describing the sample layout.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kDatasetMagic = 0x444c4643;  // "CFLD"
inline constexpr std::uint32_t kDatasetVersion = 1;

inline void save_dataset(const std::string& path, const channel::PilotDataset& ds) {
    if (ds.samples.empty()) throw std::invalid_argument("save_dataset: empty dataset");
    const auto& first = ds.samples.front().truth.matrix;
    const std::uint32_t n = static_cast<std::uint32_t>(first.rows());
    const std::uint32_t ntb = static_cast<std::uint32_t>(first.cols());
    const std::uint32_t pilot_len = static_cast<std::uint32_t>(ds.samples.front().received.size());

    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_dataset: cannot open " + path);
    detail::write_u32(os, kDatasetMagic);
    detail::write_u32(os, kDatasetVersion);
    detail::write_u32(os, n);
    detail::write_u32(os, ntb);
    for (const auto& s : ds.samples) {
        for (int t = 0; t < s.received.size(); ++t) {
            detail::write_f64(os, s.received(t).real());
            detail::write_f64(os, s.received(t).imag());
        }
        for (int r = 0; r < s.truth.matrix.rows(); ++r)
            for (int c = 0; c < s.truth.matrix.cols(); ++c) {
                detail::write_f64(os, s.truth.matrix(r, c).real());
                detail::write_f64(os, s.truth.matrix(r, c).imag());
            }
        detail::write_f64(os, s.snr_db);
    }

    std::ofstream man(path + ".manifest");
    man << "format: cffl-pilot-dataset\n"
        << "version: " << kDatasetVersion << "\n"
        << "user_id: " << ds.user_id << "\n"
        << "samples: " << ds.samples.size() << "\n"
        << "pilot_length: " << pilot_len << "\n"
        << "ris_elements: " << n << "\n"
        << "cascaded_cols: " << ntb << "\n"
        << "layout: per sample [received re/im x pilot_length, truth re/im row-major, snr_db]\n";
}

inline channel::PilotDataset load_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_dataset: cannot open " + path);
    if (detail::read_u32(is) != kDatasetMagic) throw std::runtime_error("load_dataset: bad magic");
    if (detail::read_u32(is) != kDatasetVersion)
        throw std::runtime_error("load_dataset: unsupported version");
    const std::uint32_t n = detail::read_u32(is);
    const std::uint32_t ntb = detail::read_u32(is);

    std::ifstream man(path + ".manifest");
    if (!man) throw std::runtime_error("load_dataset: missing manifest for " + path);
    int user_id = 0;
    std::size_t samples = 0;
    std::uint32_t pilot_len = 0;
    std::string line;
    while (std::getline(man, line)) {
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "user_id:") ls >> user_id;
        else if (key == "samples:") ls >> samples;
        else if (key == "pilot_length:") ls >> pilot_len;
    }

    channel::PilotDataset ds;
    ds.user_id = user_id;
    ds.samples.resize(samples);
    for (auto& s : ds.samples) {
        s.received.resize(pilot_len);
        for (std::uint32_t t = 0; t < pilot_len; ++t) {
            const double re = detail::read_f64(is);
            const double im = detail::read_f64(is);
            s.received(t) = {re, im};
        }
        s.truth.matrix.resize(n, ntb);
        for (std::uint32_t r = 0; r < n; ++r)
            for (std::uint32_t c = 0; c < ntb; ++c) {
                const double re = detail::read_f64(is);
                const double im = detail::read_f64(is);
                s.truth.matrix(r, c) = {re, im};
            }
        s.snr_db = detail::read_f64(is);
    }
    if (!is) throw std::runtime_error("load_dataset: truncated file");
    return ds;
}

// ---------------------------------------------------------------------------
// Model checkpoints: versioned layer descriptors + f64 parameters,
// bit-exact round-trip.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kModelMagic = 0x4d4c4643;  // "CFLM"
inline constexpr std::uint32_t kModelVersion = 1;

inline void save_model(const std::string& path, const nn::LayeredModel& model) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_model: cannot open " + path);
    detail::write_u32(os, kModelMagic);
    detail::write_u32(os, kModelVersion);
    detail::write_u32(os, static_cast<std::uint32_t>(model.layers.size()));
    detail::write_u32(os, static_cast<std::uint32_t>(model.shared_split));
    for (const auto& l : model.layers) {
        detail::write_u32(os, static_cast<std::uint32_t>(l.kind));
        detail::write_u32(os, static_cast<std::uint32_t>(l.activation));
        detail::write_u32(os, static_cast<std::uint32_t>(l.in_dim));
        detail::write_u32(os, static_cast<std::uint32_t>(l.out_dim));
        detail::write_u32(os, static_cast<std::uint32_t>(l.in_ch));
        detail::write_u32(os, static_cast<std::uint32_t>(l.out_ch));
        detail::write_u32(os, static_cast<std::uint32_t>(l.kernel));
        detail::write_u32(os, static_cast<std::uint32_t>(l.length));
        detail::write_u32(os, static_cast<std::uint32_t>(l.weights.size()));
        detail::write_u32(os, static_cast<std::uint32_t>(l.bias.size()));
        detail::write_u32(os, static_cast<std::uint32_t>(l.running_mean.size()));
        detail::write_f64s(os, l.weights);
        detail::write_f64s(os, l.bias);
        detail::write_f64s(os, l.running_mean);
        detail::write_f64s(os, l.running_var);
    }
}

inline nn::LayeredModel load_model(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_model: cannot open " + path);
    if (detail::read_u32(is) != kModelMagic) throw std::runtime_error("load_model: bad magic");
    if (detail::read_u32(is) != kModelVersion)
        throw std::runtime_error("load_model: unsupported version");
    nn::LayeredModel model;
    const std::uint32_t layers = detail::read_u32(is);
    model.shared_split = detail::read_u32(is);
    model.layers.resize(layers);
    for (auto& l : model.layers) {
        l.kind = static_cast<nn::LayerKind>(detail::read_u32(is));
        l.activation = static_cast<nn::Activation>(detail::read_u32(is));
        l.in_dim = static_cast<int>(detail::read_u32(is));
        l.out_dim = static_cast<int>(detail::read_u32(is));
        l.in_ch = static_cast<int>(detail::read_u32(is));
        l.out_ch = static_cast<int>(detail::read_u32(is));
        l.kernel = static_cast<int>(detail::read_u32(is));
        l.length = static_cast<int>(detail::read_u32(is));
        l.weights.resize(detail::read_u32(is));
        l.bias.resize(detail::read_u32(is));
        const std::uint32_t bn = detail::read_u32(is);
        l.running_mean.resize(bn);
        l.running_var.resize(bn);
        detail::read_f64s(is, l.weights);
        detail::read_f64s(is, l.bias);
        detail::read_f64s(is, l.running_mean);
        detail::read_f64s(is, l.running_var);
    }
    if (!is) throw std::runtime_error("load_model: truncated file");
    return model;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

class CsvWriter {
public:
    explicit CsvWriter(const std::string& path) : os_(path) {
        if (!os_) throw std::runtime_error("CsvWriter: cannot open " + path);
        os_ << std::setprecision(17);
    }

    void row(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) os_ << ',';
            os_ << cells[i];
        }
        os_ << '\n';
    }

    template <typename... Ts>
    void values(const Ts&... vs) {
        bool first = true;
        ((os_ << (first ? "" : ","), first = false, os_ << vs), ...);
        os_ << '\n';
    }

private:
    std::ofstream os_;
};

inline std::string num(double v) {
    std::ostringstream ss;
    ss << std::setprecision(17) << v;
    return ss.str();
}

}  // namespace cffl::io

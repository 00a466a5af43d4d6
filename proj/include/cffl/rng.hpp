#pragma once

#include <cmath>
#include <complex>
#include <cstdint>

namespace cffl {

// splitmix64, used to derive independent stream seeds from (master, id).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// xoshiro256** with hand-rolled distributions so that draws are identical
// across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) {
        for (int i = 0; i < 4; ++i) {
            seed = mix_seed(seed, 0xabcdef01);
            s_[i] = seed;
        }
    }

    static Rng stream(std::uint64_t master, std::uint64_t id) {
        return Rng(mix_seed(master, id));
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    std::uint64_t uniform_int(std::uint64_t n) { return next_u64() % n; }

    // standard normal via Box-Muller
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // circularly-symmetric complex Gaussian, unit variance
    std::complex<double> complex_normal() {
        const double s = std::sqrt(0.5);
        const double re = normal();
        const double im = normal();
        return {s * re, s * im};
    }

    std::complex<double> unit_phase() {
        const double a = uniform(0.0, 2.0 * M_PI);
        return {std::cos(a), std::sin(a)};
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t s_[4];
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace cffl

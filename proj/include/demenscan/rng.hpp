#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "demenscan/errors.hpp"

namespace demenscan {

// Deterministic random source. The engine is std::mt19937_64, whose output
// sequence is fully specified by the standard, and the uniform/normal
// transforms below are hand-rolled so draws are identical across platforms
// (std::uniform_real_distribution et al. are implementation-defined).
class SeededRng {
public:
    explicit SeededRng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform draw in [0, 1) with 53 bits of mantissa.
    double unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) {
        if (!(lo <= hi)) {
            throw ParameterError("uniform: lo > hi");
        }
        return lo + (hi - lo) * unit();
    }

    // Marsaglia polar method; keeps the spare deviate, so a fixed call
    // sequence yields a fixed draw sequence.
    double normal(double mean, double sigma) {
        if (!(sigma >= 0.0)) {
            throw ParameterError("normal: sigma must be >= 0");
        }
        if (has_spare_) {
            has_spare_ = false;
            return mean + sigma * spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * unit() - 1.0;
            v = 2.0 * unit() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double r = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * r;
        has_spare_ = true;
        return mean + sigma * u * r;
    }

    // Unbiased-enough index draw for shuffles (modulo bias is irrelevant at
    // our sizes and keeps the sequence trivially portable).
    uint64_t below(uint64_t n) { return engine_() % n; }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// Mixes two 64-bit values into a new seed (splitmix64 finalizer over a
// hash-combine). Used to derive per-class, per-fold, per-epoch streams.
inline uint64_t mix_seed(uint64_t a, uint64_t b) {
    uint64_t x = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

} // namespace demenscan

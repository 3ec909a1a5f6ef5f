#pragma once
// Deterministic random sampling.
//
// All stochastic code in the library draws through these helpers over an
// explicit std::mt19937_64. The standard distributions are implementation
// defined, so normal deviates come from our own Box-Muller transform and
// uniforms from explicit 53-bit scaling; identical seeds give identical
// streams on every platform.

#include <cmath>
#include <cstdint>
#include <random>

namespace morphreg {

// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(std::mt19937_64& gen) {
    return static_cast<double>(gen() >> 11) * 0x1.0p-53;
}

// Uniform double in [lo, hi).
inline double uniform_range(std::mt19937_64& gen, double lo, double hi) {
    return lo + (hi - lo) * uniform01(gen);
}

// Uniform integer in [0, n). n must be positive; modulo bias is negligible
// for the small ranges used here (n far below 2^64).
inline std::uint64_t uniform_index(std::mt19937_64& gen, std::uint64_t n) {
    return gen() % n;
}

// Standard normal deviates via the Box-Muller transform. Caches the second
// deviate of each pair so consecutive calls consume bits predictably.
class NormalSampler {
public:
    double operator()(std::mt19937_64& gen) {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform01(gen);
        double u2 = uniform01(gen);
        while (u1 <= 0.0) u1 = uniform01(gen);   // log(0) guard
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    void reset() { has_spare_ = false; }

private:
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace morphreg

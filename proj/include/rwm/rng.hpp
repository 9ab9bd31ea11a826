#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace rwm {

/// Seedable generator used by all dataset generators.
///
/// Algorithm: std::mt19937_64 seeded with the 64-bit seed. Uniform variates
/// take the top 53 bits of one draw and scale by 2^-53, giving [0, 1).
/// Normal variates use the basic Box-Muller transform on two uniforms
/// (u1 mapped to (0, 1]) and return the cosine branch only, so every normal
/// consumes exactly two raw draws. The standard library distributions are
/// avoided because their algorithms are implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {
        const double u1 = 1.0 - uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

private:
    std::mt19937_64 engine_;
};

/// SplitMix64 finalizer; derives independent child seeds from a parent seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace rwm

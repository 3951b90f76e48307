#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>

namespace rapbrl {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used for every seed derivation in the project.
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Derives a child seed from (seed, stream). Stable across platforms.
constexpr std::uint64_t hash64(std::uint64_t seed, std::uint64_t stream) {
    return mix64(mix64(seed) ^ (stream * 0xd1b54a32d192ed03ULL + 0x8cb92ba72f3d8dd7ULL));
}

/// Uniform double in [0, 1) built from the top 53 bits; independent of the
/// standard library's distribution implementations.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Uniform integer in [0, n).
inline int uniform_index(Rng& rng, int n) {
    return static_cast<int>(uniform01(rng) * n);
}

/// Samples an index from a probability row (entries assumed to sum to one).
template <typename Row> int sample_categorical(const Row& probs, Rng& rng) {
    const double u = uniform01(rng);
    double acc = 0.0;
    int last_positive = 0;
    for (Eigen::Index i = 0; i < probs.size(); ++i) {
        if (probs(i) <= 0.0) continue;
        acc += probs(i);
        last_positive = static_cast<int>(i);
        if (u < acc) return last_positive;
    }
    return last_positive;
}

} // namespace rapbrl

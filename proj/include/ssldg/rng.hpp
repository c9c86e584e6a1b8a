#pragma once

#include <cmath>
#include <cstdint>

#include "ssldg/errors.hpp"

namespace ssldg {

// Counter-based deterministic RNG. Streams are derived by keying, never by
// sharing mutable state: fork(tag) returns an independent generator whose
// sequence depends only on (parent key, tag). Batch-parallel consumers that
// fork per (sample, stage, class) therefore draw bit-identical values
// regardless of evaluation order.
//
// All distributions are hand-rolled on top of splitmix64 so that sequences
// are reproducible across standard libraries and platforms.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(mix(seed)) {}

    // Independent substream keyed by `tag`; does not advance this generator.
    Rng fork(std::uint64_t tag) const {
        return Rng(from_key, mix(state_ ^ mix(tag + 0x9E3779B97F4A7C15ull)));
    }

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ull;
        return mix(state_);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    int below(int n) {
        if (n <= 0) throw ContractError("Rng::below: n must be positive");
        return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n));
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Standard normal via Box-Muller (two uniforms per draw, no cached spare).
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log1p(-u1));
        return r * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Truncated Gaussian: rejection inside mean +/- 2*sigma. sigma == 0
    // collapses to the mean.
    double trunc_normal(double mean, double sigma) {
        if (sigma < 0.0) throw ContractError("Rng::trunc_normal: sigma must be >= 0");
        if (sigma == 0.0) return mean;
        for (int attempt = 0; attempt < 256; ++attempt) {
            double z = normal();
            if (z >= -2.0 && z <= 2.0) return mean + sigma * z;
        }
        return mean;  // unreachable in practice, keeps the sampler total
    }

  private:
    struct from_key_t {};
    static constexpr from_key_t from_key{};
    Rng(from_key_t, std::uint64_t key) : state_(key) {}

    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9E3779B97F4A7C15ull;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    std::uint64_t state_;
};

// Stage tags for stream derivation (seed -> sample -> stage -> class).
namespace stream {
inline constexpr std::uint64_t kModelInit = 1;
inline constexpr std::uint64_t kBatch = 2;
inline constexpr std::uint64_t kGlobalAug = 3;
inline constexpr std::uint64_t kFocalAug = 4;
inline constexpr std::uint64_t kWeakAug = 5;
inline constexpr std::uint64_t kPhantomGeometry = 6;
inline constexpr std::uint64_t kPhantomIntensity = 7;
inline constexpr std::uint64_t kSplit = 8;
inline constexpr std::uint64_t kTrainAug = 9;
}  // namespace stream

}  // namespace ssldg

#pragma once

#include <cstdint>
#include <string_view>

namespace phonssm {

/// SplitMix64 counter generator (Steele/Lea/Flood mixing constants).
///
/// The integer stream is bit-identical on every platform; all randomness in
/// the project (init, shuffling, augmentation, synthetic data) derives from
/// named substreams of a single user seed so that runs reproduce exactly.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1), 53-bit resolution.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    /// Uniform integer in [lo, hi] inclusive. Modulo mapping; the bias is
    /// below 2^-50 for the ranges used here and the mapping is fixed, which
    /// is what reproducibility needs.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<std::int64_t>(next_u64() % span);
    }

    /// Standard normal via Box-Muller with a cached spare.
    double normal();

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// Derive an independent seed for a named substream, e.g.
/// substream(seed, "shuffle", epoch). FNV-1a over the tag mixed with the
/// indices through the SplitMix64 finalizer.
std::uint64_t substream(std::uint64_t seed, std::string_view tag, std::uint64_t a = 0,
                        std::uint64_t b = 0);

}  // namespace phonssm

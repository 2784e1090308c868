#pragma once

#include <cstdint>
#include <random>

namespace tsclab {

using Rng = std::mt19937_64;

// Replication streams: the network of replication i is seeded with
// base ^ i and its policy sampler with (base ^ i) ^ kPolicyStreamSalt.
inline constexpr std::uint64_t kPolicyStreamSalt = 0x9E3779B97F4A7C15ULL;

inline std::uint64_t replication_seed(std::uint64_t base, std::uint64_t index) {
  return base ^ index;
}

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline bool bernoulli(Rng& rng, double p) { return uniform01(rng) < p; }

/// Uniform integer in [0, bound) by rejection; exact for any bound > 0.
inline std::uint64_t uniform_below(Rng& rng, std::uint64_t bound) {
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % bound;
}

}  // namespace tsclab

#pragma once

// Deterministic draws on top of mt19937_64. std::*_distribution is
// implementation-defined, so all sampling goes through these helpers to keep
// byte-identical outputs for a fixed seed.

#include <cmath>
#include <cstdint>
#include <random>

namespace cebsnet {

using Rng = std::mt19937_64;

inline double rand_unit(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double rand_uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * rand_unit(rng);
}

inline std::int64_t rand_index(Rng& rng, std::int64_t n) {
  return static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(n));
}

// Box-Muller; one value per call (the pair's second half is discarded to keep
// the stream position independent of call parity).
inline double rand_normal(Rng& rng) {
  double u1 = rand_unit(rng);
  double u2 = rand_unit(rng);
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

}  // namespace cebsnet

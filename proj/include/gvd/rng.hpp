#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "gvd/matrix.hpp"

namespace gvd {

using Rng = std::mt19937_64;

// splitmix64 finalizer; combines seeds into independent streams.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Uniform in [0, 1) with 53 bits; portable across standard libraries.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double normal(Rng& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

inline int uniform_int(Rng& rng, int n) {
  return static_cast<int>(uniform01(rng) * n);
}

inline void fill_normal(Matrix& m, Rng& rng, double stddev) {
  for (double& x : m.data) x = stddev * normal(rng);
}

inline void fill_uniform(Matrix& m, Rng& rng, double bound) {
  for (double& x : m.data) x = bound * (2.0 * uniform01(rng) - 1.0);
}

}  // namespace gvd

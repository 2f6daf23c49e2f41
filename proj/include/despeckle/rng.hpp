#pragma once

// Deterministic random source shared by every stochastic part of the library.
//
// The engine is std::mt19937_64, whose output sequence is fixed by the C++
// standard. The standard *distributions* are implementation defined, so all
// derived variates (uniform reals, integers, normals, gamma) are computed
// here from raw engine words:
//
//   uniform()      top 53 bits of one word scaled by 2^-53, in [0, 1)
//   below(n)       Lemire-style rejection on 64-bit words, unbiased
//   normal()       Marsaglia polar method (pairs cached)
//   gamma(k)       Marsaglia-Tsang squeeze/rejection, k >= 1, unit scale
//
// Sub-streams are derived with derive_seed(seed, index), a SplitMix64
// finalizer over seed + (index + 1) * 0x9E3779B97F4A7C15.

#include <cmath>
#include <cstdint>
#include <random>

#include "despeckle/errors.hpp"

namespace despeckle {

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Seed for the index-th independent sub-stream of `seed`.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) noexcept {
  return splitmix64(seed + (index + 1) * 0x9E3779B97F4A7C15ULL);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw ConfigError("Rng::below: empty range");
    // Rejection threshold: 2^64 mod n.
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t r = engine_();
      if (r >= threshold) return r % n;
    }
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double factor = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * factor;
    has_spare_ = true;
    return u * factor;
  }

  /// Gamma(shape, scale 1) for shape >= 1.
  double gamma(double shape) {
    if (!(shape >= 1.0)) throw ConfigError("Rng::gamma: shape must be >= 1");
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform();
      const double x2 = x * x;
      if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
      if (u > 0.0 && std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace despeckle

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>

namespace tppkit {

// Seeded 64-bit generator. Variates are derived from raw engine output by
// fixed formulas (not std:: distributions) so streams are reproducible
// across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Uniform on [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Exponential variate with the given rate (> 0).
  double exponential(double rate) { return -std::log1p(-uniform()) / rate; }

  // Unbiased integer on [0, n), n > 0.
  std::size_t uniform_index(std::size_t n) {
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t draw = engine_();
    while (draw >= limit) draw = engine_();
    return static_cast<std::size_t>(draw % bound);
  }

  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace tppkit

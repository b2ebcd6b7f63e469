#pragma once

#include <cmath>
#include <cstdint>

namespace reconformer {

// SplitMix64 stream. Every random draw in the project goes through this
// generator so that any consumer (mask sampling, k-space noise, weight init,
// phantom geometry) can be replayed exactly from a 64-bit seed, independent of
// the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double next_range(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

  // Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

  // Standard normal via Box-Muller; draws two uniforms per pair and caches the
  // second value, so the stream advances by exactly one u64 per uniform.
  double next_gauss() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = 1.0 - next_unit();  // (0, 1], keeps log() finite
    double u2 = next_unit();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
  }

  // Normal truncated to +/- 2 sigma (resampled), used for weight init.
  double next_trunc_gauss(double stddev) {
    double z = next_gauss();
    while (std::fabs(z) > 2.0) z = next_gauss();
    return z * stddev;
  }

 private:
  std::uint64_t state_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

// Derives an independent stream for a sub-purpose (phantom vs mask vs noise of
// one sample, per-sample seeds from a master seed, ...).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  Rng r(seed ^ (0x9E3779B97F4A7C15ull * (salt + 1)));
  return r.next_u64();
}

}  // namespace reconformer

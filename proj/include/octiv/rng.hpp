#pragma once

// Counter-based random streams. Every consumer derives an independent stream
// from (seed, tag...) via the SplitMix64 finalizer, so parallel work keyed by
// photon / pixel / iteration index draws identical numbers under any thread
// count.
//
// SplitMix64 per Steele, Lea & Flood, "Fast splittable pseudorandom number
// generators" (the java.util.SplittableRandom mixer).

#include <cmath>
#include <cstdint>

namespace octiv {

inline uint64_t splitmix_mix(uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ULL;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBULL;
  z ^= z >> 31;
  return z;
}

/// Combines a seed with stream tags into an independent stream key. Seed and
/// tag are mixed separately before combining: xor of the raw values would
/// alias (seed, tag) pairs whose low bits cancel.
inline uint64_t derive_stream(uint64_t seed) { return splitmix_mix(seed + 0x9E3779B97F4A7C15ULL); }

template <typename... Rest>
inline uint64_t derive_stream(uint64_t seed, uint64_t tag, Rest... rest) {
  const uint64_t combined = splitmix_mix(seed + 0x9E3779B97F4A7C15ULL) ^
                            splitmix_mix(tag + 0xD1B54A32D192ED03ULL);
  return derive_stream(combined, rest...);
}

class Rng {
 public:
  explicit Rng(uint64_t stream_key) : state_(stream_key) {}

  uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    return splitmix_mix(state_);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in (0, 1]; safe as a log argument.
  double uniform_pos() { return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (two uniforms per pair, cached).
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    const double u1 = uniform_pos();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  /// Mean-1 exponential.
  double exponential() { return -std::log(uniform_pos()); }

  /// Gamma(shape, scale) via Marsaglia-Tsang; shape >= 1.
  double gamma(double shape, double scale) {
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform_pos();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v * scale;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v * scale;
    }
  }

 private:
  uint64_t state_;
  bool have_cached_ = false;
  double cached_ = 0.0;
};

} // namespace octiv

#pragma once

#include <cmath>
#include <cstdint>

namespace samm2d {

// SplitMix64 finalizer. Also used to derive per-study / per-fold seed streams:
// stream member i of seed s is splitmix64(s + i * golden_gamma).
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline uint64_t derive_seed(uint64_t seed, uint64_t index) {
  return splitmix64(seed + index * 0x9E3779B97F4A7C15ULL);
}

// Small deterministic PRNG with explicit float conversions so that identical
// seeds give bit-identical streams on every platform (std::uniform_real_distribution
// makes no such promise). State advances with the SplitMix64 sequence.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  float next_float() { return static_cast<float>(next_double()); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Index in [0, n). n must be > 0.
  uint64_t next_index(uint64_t n) { return next_u64() % n; }

  bool bernoulli(double p) { return next_double() < p; }

  // Box-Muller, one draw cached.
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = next_double();
    double u2 = next_double();
    while (u1 <= 1e-300) u1 = next_double();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double gaussian(double mean, double sigma) { return mean + sigma * gaussian(); }

 private:
  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace samm2d

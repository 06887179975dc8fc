#pragma once

#include <cmath>
#include <cstdint>

namespace chardiff {

// Deterministic splittable random stream (SplitMix64). The construction seed
// is kept verbatim so child streams depend only on (seed, salt), never on how
// many values the parent has already drawn.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Modulo bias is below 1e-15 for any n that
  // fits desk-scale use.
  int uniform_int(int n) { return static_cast<int>(next_u64() % static_cast<uint64_t>(n)); }

  // Standard normal via Box-Muller. Consumes exactly two uniforms per call.
  double normal() {
    double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  template <class S>
  void fill_normal(S* dst, size_t n) {
    for (size_t i = 0; i < n; ++i) dst[i] = static_cast<S>(normal());
  }

  // Independent child stream; used to hand per-sample / per-pass streams to
  // parallel workers without sharing state.
  Rng child(uint64_t salt) const { return Rng(mix(seed_, salt)); }

  uint64_t seed() const { return seed_; }

  static uint64_t mix(uint64_t a, uint64_t b) {
    uint64_t z = a ^ (b + 0x9E3779B97F4A7C15ull + (a << 6) + (a >> 2));
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

 private:
  uint64_t seed_;
  uint64_t state_;
};

}  // namespace chardiff

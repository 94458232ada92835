#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace xrseq {

/// Mixes a seed with a stream id into an independent sub-seed
/// (splitmix64 finalizer). Used to give parallel units (patients,
/// workers) their own deterministic streams.
inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
  uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Deterministic RNG: mt19937_64 (whose output sequence the standard
// pins down exactly) with all value derivations spelled out here
// instead of delegated to distribution classes, which are allowed to
// differ between standard libraries. Same seed, same bytes, anywhere.
class DeterministicRng {
 public:
  explicit DeterministicRng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  /// Uniform in [0,1) with 53 random mantissa bits.
  double next_unit() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  float next_unit_f() { return static_cast<float>(next_unit()); }

  /// Uniform float in [lo, hi).
  double next_range(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

  /// Unbiased uniform integer in [0, bound) by rejection.
  uint64_t next_below(uint64_t bound) {
    if (bound <= 1) return 0;
    const uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return x % bound;
  }

  /// Standard normal via Box-Muller (first value only, stateless).
  double next_gaussian() {
    const double u1 = (static_cast<double>(gen_() >> 11) + 1.0) * 0x1.0p-53;  // (0,1]
    const double u2 = next_unit();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  /// Fisher-Yates shuffle, back to front.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace xrseq

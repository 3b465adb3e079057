#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace retgate {

/// Seeded generator with portable distributions.
///
/// std::mt19937_64 output is fully specified by the standard, but the
/// std:: distributions are not, so uniform/normal/shuffle are derived here
/// from raw engine output. Every run is reproducible across standard
/// libraries.
class Rng {
 public:
  static constexpr const char* kAlgorithm = "mt19937_64+box_muller";

  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via the Box-Muller transform.
  double normal();

  /// Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Order-sensitive combination of two 64-bit values into a new seed.
std::uint64_t combine_seed(std::uint64_t seed, std::uint64_t value);

}  // namespace retgate

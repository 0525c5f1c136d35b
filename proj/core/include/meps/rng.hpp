#pragma once

#include <cstdint>
#include <string_view>

#include "meps/tensor.hpp"

namespace meps {

/// SplitMix64 stream.
///
/// Child streams are derived as
///   child_seed(seed, index) = splitmix64(seed ^ golden_mix(index))
/// where golden_mix(i) = (i + 1) * 0x9E3779B97F4A7C15 and splitmix64 is one
/// full SplitMix64 step (increment plus finalizer). Parallel work never shares
/// an Rng; it derives a child per work item instead.
class Rng {
 public:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

  explicit Rng(std::uint64_t seed) : state_(seed) {}

  static std::uint64_t splitmix64(std::uint64_t x) {
    std::uint64_t z = x + kGolden;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }
  static std::uint64_t golden_mix(std::uint64_t index) { return (index + 1) * kGolden; }
  static std::uint64_t child_seed(std::uint64_t seed, std::uint64_t index) {
    return splitmix64(seed ^ golden_mix(index));
  }
  static Rng child(std::uint64_t seed, std::uint64_t index) { return Rng(child_seed(seed, index)); }

  std::uint64_t next_u64() {
    const std::uint64_t out = splitmix64(state_);
    state_ += kGolden;
    return out;
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);

  /// Standard normal via Box-Muller; consumes exactly two draws.
  double normal();

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

/// 64-bit FNV-1a, used to turn stable string ids into stream indices.
std::uint64_t fnv1a64(std::string_view text);

template <typename T>
Tensor<T> randn(Shape shape, Rng& rng, double stddev = 1.0) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(stddev * rng.normal());
  return t;
}

template <typename T>
Tensor<T> rand_uniform(Shape shape, Rng& rng, double lo, double hi) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

}  // namespace meps

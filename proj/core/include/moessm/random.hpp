#pragma once

#include <cstdint>

namespace moessm {

/// Counter-based generator: every draw is a pure function of
/// (seed, stream, index), so sub-streams can be generated in any order.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream) noexcept;

  /// Derives an independent sub-stream keyed by `id`.
  CounterRng split(std::uint64_t id) const noexcept;

  std::uint64_t bits(std::uint64_t index) const noexcept;
  /// Uniform in [0, 1).
  double uniform(std::uint64_t index) const noexcept;
  /// Uniform in [lo, hi).
  double uniform(std::uint64_t index, double lo, double hi) const noexcept {
    return lo + (hi - lo) * uniform(index);
  }
  /// Standard normal (Box-Muller over two counter draws).
  double normal(std::uint64_t index) const noexcept;

 private:
  explicit CounterRng(std::uint64_t key) noexcept : key_(key) {}
  std::uint64_t key_;
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

}  // namespace moessm

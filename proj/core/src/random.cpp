#include "moessm/random.hpp"

#include <cmath>
#include <numbers>

namespace moessm {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

CounterRng::CounterRng(std::uint64_t seed, std::uint64_t stream) noexcept
    : key_(splitmix64(splitmix64(seed) ^ (stream * 0xD1B54A32D192ED03ULL))) {}

CounterRng CounterRng::split(std::uint64_t id) const noexcept {
  return CounterRng(splitmix64(key_ ^ splitmix64(id + 0x632BE59BD9B4E019ULL)));
}

std::uint64_t CounterRng::bits(std::uint64_t index) const noexcept {
  return splitmix64(key_ + splitmix64(index));
}

double CounterRng::uniform(std::uint64_t index) const noexcept {
  return static_cast<double>(bits(index) >> 11) * 0x1.0p-53;
}

double CounterRng::normal(std::uint64_t index) const noexcept {
  // (0, 1] keeps log finite.
  const double u1 = 1.0 - uniform(2 * index);
  const double u2 = uniform(2 * index + 1);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace moessm

#pragma once

#include <cstdint>

#include "moessm/instance.hpp"

namespace testing {

inline moessm::RngInstanceSpec spec(std::uint64_t seed, moessm::Dims dims, double rho = 0.9,
                                    moessm::TransitionKind kind = moessm::TransitionKind::kDense) {
  moessm::RngInstanceSpec s;
  s.seed = seed;
  s.dims = dims;
  s.rho_target = rho;
  s.transition = kind;
  return s;
}

inline moessm::Tensor3 random_tensor(std::uint64_t seed, std::size_t t, std::size_t n, std::size_t p) {
  moessm::Tensor3 out(t, n, p);
  const moessm::CounterRng rng(seed, 77);
  for (std::size_t i = 0; i < out.flat().size(); ++i) out.flat()[i] = rng.normal(i);
  return out;
}

}  // namespace testing

#pragma once

#include <cstdint>
#include <string_view>

#include "moessm/instance.hpp"
#include "moessm/types.hpp"

namespace moessm {

enum class Design { kMixed, kSeparated };

std::string_view to_string(Design design);
Design parse_design(std::string_view name);

/// Per-step FLOP polynomials of the token mixer.
struct CostModel {
  TransitionKind transition = TransitionKind::kDense;

  /// One state update A h + U over all channels: P(2N^2 + N) for dense A,
  /// 3NP for diagonal or scalar A.
  std::uint64_t c_step(std::uint64_t n, std::uint64_t p) const;
  /// Mixing k expert streams: k(2NP + NP) for the injections plus kNP for
  /// the readouts.
  static std::uint64_t c_mix(std::uint64_t k, std::uint64_t p, std::uint64_t n);
  /// Router: an E x P matrix-vector product plus softmax and selection.
  static std::uint64_t c_route(std::uint64_t e, std::uint64_t p);
  /// One readout C^T h over all channels.
  static std::uint64_t c_readout(std::uint64_t n, std::uint64_t p);
};

struct FlopCounts {
  std::uint64_t recurrence = 0;
  std::uint64_t mixing = 0;
  std::uint64_t routing = 0;
  std::uint64_t total = 0;

  bool operator==(const FlopCounts&) const = default;
};

/// Analytic FLOPs of one forward pass.
///  mixed:     recurrence T c_step, mixing T (c_mix + c_readout).
///  separated: recurrence T E c_step, mixing T (E NP + k (c_readout + 2P)),
///             i.e. every expert forms its injection and the k active
///             readouts are scaled and summed.
/// Both add T c_route. Throws InvalidInput if k > E or a dimension other
/// than T is zero.
FlopCounts flop_model(Design design, const Dims& dims, TransitionKind transition = TransitionKind::kDense);

}  // namespace moessm

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "moessm/random.hpp"
#include "moessm/types.hpp"

namespace moessm {

struct Dims {
  std::size_t steps = 1;     // T
  std::size_t state = 1;     // N
  std::size_t channels = 1;  // P
  std::size_t experts = 1;   // E
  std::size_t active = 1;    // k

  bool operator==(const Dims&) const = default;
};

/// Standard deviations of the generated quantities. For the transition,
/// `a` scales a Gaussian dense matrix or the half-width of a uniform draw
/// for the diagonal and scalar forms.
struct StreamScales {
  double x = 1.0;
  double a = 1.0;
  double b = 1.0;
  double c = 1.0;
  double x_inj = 1.0;
  double router = 1.0;
};

struct RngInstanceSpec {
  std::uint64_t seed = 0;
  Dims dims;
  StreamScales scales;
  std::optional<double> rho_target;
  TransitionKind transition = TransitionKind::kDense;

  void validate() const;
};

struct GeneratedInstance {
  SequenceBatch x;
  TransitionSpec transition;
  std::vector<StreamSet> experts;  // E stream sets, or empty
  Matrix router_weights;           // E x P
};

/// Deterministic random instance. When rho_target is set the transition is
/// rescaled so that its induced 2-norm equals rho_target. With
/// with_streams = false the expert streams are left empty (X, A and the
/// router are drawn from the same sub-streams either way).
GeneratedInstance generate_instance(const RngInstanceSpec& spec, bool with_streams = true);

/// Fills a matrix with scale * N(0, 1) draws from `rng`.
Matrix random_matrix(const CounterRng& rng, std::size_t rows, std::size_t cols, double scale);

}  // namespace moessm

#pragma once

#include <cstddef>
#include <vector>

#include "moessm/tensor.hpp"
#include "moessm/types.hpp"

namespace moessm {

/// Linear router g_t = W x_t + bias.
struct RouterParams {
  Matrix weights;            // E x P
  std::vector<double> bias;  // E, empty means zero

  std::size_t experts() const noexcept { return weights.rows(); }
};

/// Mixture weights pi (T x E) and the sorted active set of every step.
struct RoutingPlan {
  Matrix pi;
  std::vector<std::vector<std::size_t>> active;
  std::size_t k = 0;

  std::size_t steps() const noexcept { return pi.rows(); }
  std::size_t experts() const noexcept { return pi.cols(); }

  /// Dense plan over all experts with the given weights. Weights need only be
  /// nonnegative; they are not required to sum to one.
  static RoutingPlan dense(Matrix pi);

  /// Throws InvalidInput unless pi >= 0, pi is zero off the active sets, and
  /// active sets are sorted and in range.
  void validate() const;
};

Matrix router_logits(const RouterParams& params, const SequenceBatch& x);

/// Row-wise max-subtracted softmax; every expert active.
RoutingPlan softmax_route(const Matrix& logits);

/// Keeps the k largest weights per step (ties to the lower index) and zeroes
/// the rest. Retained weights are not renormalized.
RoutingPlan topk_mask(const RoutingPlan& plan, std::size_t k);

/// Indices of the k largest entries of `row`, ties to the lower index, sorted ascending.
std::vector<std::size_t> topk_indices(std::span<const double> row, std::size_t k);

}  // namespace moessm

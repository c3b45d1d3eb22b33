#include "moessm/router.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "moessm/error.hpp"

namespace moessm {

RoutingPlan RoutingPlan::dense(Matrix pi) {
  RoutingPlan plan;
  plan.k = pi.cols();
  std::vector<std::size_t> all(pi.cols());
  std::iota(all.begin(), all.end(), 0);
  plan.active.assign(pi.rows(), all);
  plan.pi = std::move(pi);
  plan.validate();
  return plan;
}

void RoutingPlan::validate() const {
  if (active.size() != pi.rows()) throw InvalidInput("RoutingPlan: one active set per step required");
  if (!all_finite(pi.flat())) throw InvalidInput("RoutingPlan: non-finite weight");
  for (std::size_t t = 0; t < pi.rows(); ++t) {
    const auto& ks = active[t];
    if (!std::is_sorted(ks.begin(), ks.end()) || std::adjacent_find(ks.begin(), ks.end()) != ks.end())
      throw InvalidInput("RoutingPlan: active set must be sorted and unique");
    std::size_t next = 0;
    for (std::size_t e = 0; e < pi.cols(); ++e) {
      const double w = pi(t, e);
      if (w < 0.0) throw InvalidInput("RoutingPlan: negative weight");
      const bool on = next < ks.size() && ks[next] == e;
      if (on) ++next;
      if (!on && w != 0.0) throw InvalidInput("RoutingPlan: nonzero weight outside the active set");
    }
    if (next != ks.size()) throw InvalidInput("RoutingPlan: active index out of range");
  }
}

Matrix router_logits(const RouterParams& params, const SequenceBatch& x) {
  const std::size_t experts = params.weights.rows();
  if (params.weights.cols() != x.channels()) throw InvalidInput("router_logits: W must be E x P");
  if (!params.bias.empty() && params.bias.size() != experts)
    throw InvalidInput("router_logits: bias must have E entries");
  Matrix g(x.steps(), experts);
  for (std::size_t t = 0; t < x.steps(); ++t) {
    const auto xt = x.token(t);
    for (std::size_t e = 0; e < experts; ++e)
      g(t, e) = dot(params.weights.row(e), xt) + (params.bias.empty() ? 0.0 : params.bias[e]);
  }
  return g;
}

RoutingPlan softmax_route(const Matrix& logits) {
  if (!all_finite(logits.flat())) throw InvalidInput("softmax_route: non-finite logits");
  if (logits.cols() == 0) throw InvalidInput("softmax_route: need E >= 1");
  Matrix pi(logits.rows(), logits.cols());
  for (std::size_t t = 0; t < logits.rows(); ++t) {
    const auto g = logits.row(t);
    const double mx = *std::max_element(g.begin(), g.end());
    double sum = 0.0;
    auto row = pi.row(t);
    for (std::size_t e = 0; e < g.size(); ++e) sum += row[e] = std::exp(g[e] - mx);
    for (double& v : row) v /= sum;
  }
  return RoutingPlan::dense(std::move(pi));
}

std::vector<std::size_t> topk_indices(std::span<const double> row, std::size_t k) {
  std::vector<std::size_t> idx(row.size());
  std::iota(idx.begin(), idx.end(), 0);
  k = std::min(k, row.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t i, std::size_t j) { return row[i] > row[j] || (row[i] == row[j] && i < j); });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

RoutingPlan topk_mask(const RoutingPlan& plan, std::size_t k) {
  const std::size_t experts = plan.experts();
  if (k == 0 || k > experts) throw InvalidInput("topk_mask: need 1 <= k <= E");
  RoutingPlan out;
  out.k = k;
  out.pi = Matrix(plan.steps(), experts);
  out.active.resize(plan.steps());
  for (std::size_t t = 0; t < plan.steps(); ++t) {
    out.active[t] = topk_indices(plan.pi.row(t), k);
    for (std::size_t e : out.active[t]) out.pi(t, e) = plan.pi(t, e);
  }
  return out;
}

}  // namespace moessm

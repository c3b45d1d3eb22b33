#include "moessm/cost.hpp"

#include <string>

#include "moessm/error.hpp"

namespace moessm {

std::string_view to_string(Design design) {
  return design == Design::kMixed ? "mixed" : "separated";
}

Design parse_design(std::string_view name) {
  if (name == "mixed") return Design::kMixed;
  if (name == "separated") return Design::kSeparated;
  throw InvalidInput("unknown design '" + std::string(name) + "'");
}

std::uint64_t CostModel::c_step(std::uint64_t n, std::uint64_t p) const {
  if (transition == TransitionKind::kDense) return p * (2 * n * n + n);
  return 3 * n * p;
}

std::uint64_t CostModel::c_mix(std::uint64_t k, std::uint64_t p, std::uint64_t n) {
  return k * (2 * n * p + n * p) + k * n * p;
}

std::uint64_t CostModel::c_route(std::uint64_t e, std::uint64_t p) {
  return 2 * e * p + 4 * e;
}

std::uint64_t CostModel::c_readout(std::uint64_t n, std::uint64_t p) {
  return 2 * n * p;
}

FlopCounts flop_model(Design design, const Dims& dims, TransitionKind transition) {
  if (dims.state == 0 || dims.channels == 0 || dims.experts == 0 || dims.active == 0)
    throw InvalidInput("flop_model: N, P, E and k must be positive");
  if (dims.active > dims.experts) throw InvalidInput("flop_model: k exceeds E");
  const CostModel model{transition};
  const std::uint64_t t = dims.steps, n = dims.state, p = dims.channels, e = dims.experts, k = dims.active;
  FlopCounts c;
  if (design == Design::kMixed) {
    c.recurrence = t * model.c_step(n, p);
    c.mixing = t * (CostModel::c_mix(k, p, n) + CostModel::c_readout(n, p));
  } else {
    c.recurrence = t * e * model.c_step(n, p);
    c.mixing = t * (e * n * p + k * (CostModel::c_readout(n, p) + 2 * p));
  }
  c.routing = t * CostModel::c_route(e, p);
  c.total = c.recurrence + c.mixing + c.routing;
  return c;
}

}  // namespace moessm

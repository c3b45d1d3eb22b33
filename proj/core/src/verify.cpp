#include "moessm/verify.hpp"

#include <algorithm>
#include <cmath>

#include "moessm/cost.hpp"
#include "moessm/grad.hpp"
#include "moessm/random.hpp"
#include "moessm/router.hpp"
#include "moessm/ssd.hpp"
#include "moessm/ssm.hpp"
#include "moessm/theory.hpp"

namespace moessm {

namespace {

std::uint64_t instance_seed(std::uint64_t seed, std::uint64_t check, std::uint64_t i) {
  return splitmix64(splitmix64(seed ^ (check << 32)) + i);
}

RngInstanceSpec make_spec(std::uint64_t seed, Dims dims, double rho,
                          TransitionKind kind = TransitionKind::kDense) {
  RngInstanceSpec s;
  s.seed = seed;
  s.dims = dims;
  s.rho_target = rho;
  s.transition = kind;
  return s;
}

// Tolerance checks report tol - dev so that a non-negative slack passes.
VerificationRecord tolerance_record(std::string check, std::uint64_t seed, Dims dims, double dev, double tol) {
  return {std::move(check), seed, dims, dev <= tol, tol - dev};
}

VerificationRecord bound_record(std::string check, std::uint64_t seed, Dims dims, double slack) {
  return {std::move(check), seed, dims, slack >= -kSlackTolerance, slack};
}

}  // namespace

bool all_pass(const std::vector<VerificationRecord>& records) {
  return std::all_of(records.begin(), records.end(), [](const auto& r) { return r.pass; });
}

std::vector<VerificationRecord> run_verification(const VerifyOptions& opts) {
  std::vector<VerificationRecord> out;
  const std::uint64_t seed = opts.seed;
  const Dims small{64, 8, 4, 4, 1};

  for (std::size_t i = 0; i < opts.instances; ++i) {
    const auto s = instance_seed(seed, 1, i);
    for (RoutingMode mode : {RoutingMode::kDense, RoutingMode::kTopK}) {
      const auto inst = make_moe_instance(make_spec(s, small, 0.9), mode);
      const double dev = structure_deviation(inst);
      const auto y = moe_param_forward(inst.experts, inst.transition, inst.plan).y;
      Dims d = small;
      if (mode == RoutingMode::kDense) d.active = d.experts;
      out.push_back(tolerance_record(mode == RoutingMode::kDense ? "structure_dense" : "structure_top1", s, d, dev,
                                     1e-14 * std::max(1.0, max_abs(y.flat()))));
    }
  }

  for (std::size_t i = 0; i < opts.instances; ++i) {
    const auto s = instance_seed(seed, 2, i);
    Dims d = small;
    d.active = d.experts;
    const auto inst = make_equality_instance(make_spec(s, d, 0.9));
    const auto r = check_equality_regime(inst);
    out.push_back(tolerance_record("equality_output", s, d, r.max_output_dev, 1e-10));
    out.push_back(tolerance_record("equality_weighted_state", s, d, r.max_state_dev, 1e-10));
    out.push_back(tolerance_record("equality_logit_gradient", s, d, equality_pi_gradient_gap(inst), 1e-8));
  }

  for (std::size_t i = 0; i < opts.instances; ++i) {
    const auto s = instance_seed(seed, 3, i);
    const auto inst = make_moe_instance(make_spec(s, small, 0.9), RoutingMode::kTopK);
    out.push_back(bound_record("mismatch_bound", s, small, check_mismatch_bound(inst).min_slack()));
    out.push_back(tolerance_record("mismatch_identity", s, small, mismatch_identity_residual(inst), 1e-10));
    out.push_back(tolerance_record("delta_recursion", s, small, check_delta_recursion(inst), 1e-10));
  }

  for (double rho : {0.9, 0.99}) {
    const auto s = instance_seed(seed, 4, static_cast<std::uint64_t>(rho * 100));
    const Dims d{2000, 4, 2, 4, 2};
    auto inst = make_moe_instance(make_spec(s, d, rho), RoutingMode::kTopK);
    inst.h0 = random_matrix(CounterRng(s, 99), d.state, d.channels, 1.0);
    const auto mixed = moe_param_forward(inst.experts, inst.transition, inst.plan, inst.h0, {Evaluator::kSequential,
                                                                                             kDefaultChunkLength, false});
    const auto b = measure_stream_bounds(mixed.mixed);
    const auto r = check_stability(inst, rho, b.u_max, b.c_max);
    out.push_back(bound_record(rho < 0.95 ? "stability_state_rho0.9" : "stability_state_rho0.99", s, d,
                               r.state.min_slack()));
    out.push_back(bound_record(rho < 0.95 ? "stability_output_rho0.9" : "stability_output_rho0.99", s, d,
                               r.output.min_slack()));
  }
  {
    const auto inst = make_tightness_instance(0.9, 1.0, 2000);
    const auto r = check_stability(inst, 0.9, 1.0, 1.0);
    double worst = 0.0;
    for (double v : r.state.slack) worst = std::max(worst, std::abs(v));
    out.push_back(tolerance_record("stability_tightness", 0, {2000, 1, 1, 1, 1}, worst, 1e-9));
  }

  for (std::size_t i = 0; i < opts.instances; ++i) {
    const auto s = instance_seed(seed, 5, i);
    const Dims d{256, 4, 3, 1, 1};
    const auto gen = generate_instance(make_spec(s, d, 0.95, TransitionKind::kScalar));
    const auto u = gen.experts[0].injection();
    const auto ref = ssm_scan_sequential(gen.transition, u, gen.experts[0].c, {}, {false});
    double worst = 0.0;
    for (std::size_t q : {1, 8, 32, 256}) {
      const auto r = ssd_chunked_injected(gen.transition, u, gen.experts[0].c, ChunkPlan::make(d.steps, q));
      const double dev = max_abs_diff(r.y.flat(), ref.y.flat()) / std::max(1.0, max_abs(ref.y.flat()));
      worst = std::max(worst, dev);
    }
    out.push_back(tolerance_record("ssd_chunked_vs_sequential", s, d, worst, 1e-8));
  }

  {
    const auto r = expressivity_demo(uniform_grid(-8.0, 8.0, 161));
    out.push_back(tolerance_record("expressivity_sigmoid", 0, {1, 1, 1, 2, 2}, r.max_sigmoid_error, 1e-12));
    out.push_back({"expressivity_cubic_gap", 0, {1, 1, 1, 2, 2}, r.polynomial_gap >= kPolynomialGapThreshold,
                   r.polynomial_gap - kPolynomialGapThreshold});
  }

  {
    const auto s = instance_seed(seed, 6, 0);
    const CounterRng rng(s, 0);
    const std::size_t experts = 6;
    double worst = 1.0;
    bool ok = true;
    for (std::size_t row = 0; row < 200; ++row) {
      Matrix logits(1, experts);
      for (std::size_t e = 0; e < experts; ++e) logits(0, e) = 3.0 * rng.normal(row * experts + e);
      const auto dense = softmax_route(logits);
      for (std::size_t k = 1; k <= experts; ++k) {
        const auto plan = topk_mask(dense, k);
        double kept = 0.0;
        std::size_t nonzero = 0;
        for (std::size_t e = 0; e < experts; ++e) {
          kept += plan.pi(0, e);
          nonzero += plan.pi(0, e) != 0.0;
          if (plan.pi(0, e) != 0.0 && plan.pi(0, e) != dense.pi(0, e)) ok = false;
        }
        ok = ok && nonzero == k && plan.active[0].size() == k;
        if (k < experts) {
          ok = ok && kept < 1.0;
          worst = std::min(worst, 1.0 - kept);
        }
        Matrix shifted = logits;
        for (double& v : shifted.flat()) v += 17.25;
        ok = ok && topk_mask(softmax_route(shifted), k).active == plan.active;
      }
    }
    out.push_back({"router_topk_contract", s, {1, 1, 1, experts, 0}, ok, worst});
  }

  {
    bool ok = true;
    for (std::size_t e : {1, 2, 3, 8, 64})
      for (std::size_t k : {1, 2})
        for (auto kind : {TransitionKind::kDense, TransitionKind::kDiagonal, TransitionKind::kScalar}) {
          if (k > e) continue;
          const Dims d{1024, 16, 64, e, k};
          const auto m = flop_model(Design::kMixed, d, kind);
          const auto sp = flop_model(Design::kSeparated, d, kind);
          ok = ok && sp.recurrence == e * m.recurrence;
          ok = ok && m.recurrence == flop_model(Design::kMixed, {1024, 16, 64, k, k}, kind).recurrence;
        }
    out.push_back({"flop_recurrence_ratio", 0, {1024, 16, 64, 0, 0}, ok, 0.0});
  }

  for (std::size_t i = 0; i < opts.instances; ++i) {
    const auto s = instance_seed(seed, 7, i);
    const Dims d{6, 3, 2, 3, 3};
    const auto inst = make_layer_instance(make_spec(s, d, 0.9), RoutingMode::kDense);
    FdOptions fd;
    fd.seed = s;
    double worst = 0.0;
    for (const auto& g : finite_diff_check(inst, fd)) worst = std::max(worst, g.max_rel_error);
    out.push_back(tolerance_record("gradient_finite_difference", s, d, worst, 1e-4));

    const auto moe_inst = make_moe_instance(make_spec(s, d, 0.9), RoutingMode::kDense);
    double adj = 0.0;
    for (const auto& r : adjoint_dot_tests(moe_inst, s)) adj = std::max(adj, r.rel_error);
    out.push_back(tolerance_record("gradient_adjoint_dot", s, d, adj, 1e-10));
  }
  return out;
}

}  // namespace moessm

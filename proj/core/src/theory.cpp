#include "moessm/theory.hpp"

#include <algorithm>
#include <cmath>

#include "moessm/error.hpp"
#include "moessm/linalg.hpp"
#include "moessm/ssm.hpp"

namespace moessm {

namespace {

bool is_zero_state(const Matrix& h0) {
  return h0.size() == 0 || max_abs(h0.flat()) == 0.0;
}

void require_zero_state(const MoeInstance& inst, const char* who) {
  if (!is_zero_state(inst.h0)) throw PreconditionError(std::string(who) + ": requires h0 = 0");
}

struct BothDesigns {
  MoeResult mixed;
  SeparatedResult separated;
};

BothDesigns run_both(const MoeInstance& inst) {
  return {moe_param_forward(inst.experts, inst.transition, inst.plan, inst.h0),
          moe_separated_forward(inst.experts, inst.transition, inst.plan)};
}

}  // namespace

MoeInstance make_moe_instance(const RngInstanceSpec& spec, RoutingMode mode) {
  auto gen = generate_instance(spec);
  const RouterParams router{gen.router_weights, {}};
  RoutingPlan plan = softmax_route(router_logits(router, gen.x));
  if (mode == RoutingMode::kTopK) plan = topk_mask(plan, spec.dims.active);
  return MoeInstance{std::move(gen.transition), std::move(gen.experts), std::move(plan), Matrix{}};
}

MoeInstance make_equality_instance(const RngInstanceSpec& spec) {
  MoeInstance inst = make_moe_instance(spec, RoutingMode::kDense);
  auto& plan = inst.plan;
  for (std::size_t t = 1; t < plan.steps(); ++t) {
    for (std::size_t e = 0; e < plan.experts(); ++e) plan.pi(t, e) = plan.pi(0, e);
    plan.active[t] = plan.active[0];
  }
  for (std::size_t e = 1; e < inst.experts.size(); ++e) inst.experts[e].c = inst.experts[0].c;
  return inst;
}

MoeInstance make_tightness_instance(double rho, double drive, std::size_t steps) {
  StreamSet s(steps, 1, 1);
  for (std::size_t t = 0; t < steps; ++t) {
    s.b(t, 0, 0) = 1.0;
    s.c(t, 0, 0) = 1.0;
    s.x_inj(t, 0) = drive;
  }
  Matrix a(1, 1, rho);
  return MoeInstance{TransitionSpec::dense(std::move(a)), {std::move(s)},
                     RoutingPlan::dense(Matrix(steps, 1, 1.0)), Matrix{}};
}

BoundReport make_bound_report(std::vector<double> lhs, std::vector<double> rhs, double eps) {
  BoundReport r;
  r.slack.resize(lhs.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < lhs.size(); ++i) {
    r.slack[i] = rhs[i] - lhs[i];
    if (i == 0 || r.slack[i] < worst) {
      worst = r.slack[i];
      r.worst_step = i + 1;
    }
  }
  r.holds = lhs.empty() || worst >= -eps;
  r.lhs = std::move(lhs);
  r.rhs = std::move(rhs);
  return r;
}

double structure_deviation(const MoeInstance& inst) {
  const auto moe = moe_param_forward(inst.experts, inst.transition, inst.plan, inst.h0);
  const auto scan = ssm_scan_sequential(inst.transition, moe.mixed.u_tilde, moe.mixed.c_tilde, inst.h0);
  return max_abs_diff(moe.y.flat(), scan.y.flat());
}

bool check_structure(const MoeInstance& inst) {
  const auto moe = moe_param_forward(inst.experts, inst.transition, inst.plan, inst.h0);
  const auto scan = ssm_scan_sequential(inst.transition, moe.mixed.u_tilde, moe.mixed.c_tilde, inst.h0);
  const double dev = max_abs_diff(moe.y.flat(), scan.y.flat());
  return dev <= 1e-14 * std::max(1.0, max_abs(moe.y.flat()));
}

StreamBounds measure_stream_bounds(const MixedStreams& mixed) {
  StreamBounds b;
  for (std::size_t t = 0; t < mixed.u_tilde.steps(); ++t) {
    b.u_max = std::max(b.u_max, norm2(mixed.u_tilde.slice(t)));
    b.c_max = std::max(b.c_max, norm2(mixed.c_tilde.slice(t)));
  }
  return b;
}

StabilityReport check_stability(const MoeInstance& inst, double rho, double u_bound, double c_bound,
                                double eps) {
  if (!(rho > 0.0 && rho < 1.0)) throw PreconditionError("check_stability: need 0 < rho < 1");
  const double norm_a = inst.transition.norm_bound();
  if (norm_a > rho * (1.0 + 1e-9))
    throw PreconditionError("check_stability: transition norm exceeds rho");

  const auto moe = moe_param_forward(inst.experts, inst.transition, inst.plan, inst.h0);
  const auto measured = measure_stream_bounds(moe.mixed);
  if (measured.u_max > u_bound * (1.0 + 1e-12))
    throw PreconditionError("check_stability: mixed injection norm exceeds U bound");
  if (measured.c_max > c_bound * (1.0 + 1e-12))
    throw PreconditionError("check_stability: mixed readout norm exceeds C bound");

  const std::size_t steps = moe.y.rows();
  const double h0_norm = inst.h0.size() == 0 ? 0.0 : norm2(inst.h0.flat());
  std::vector<double> h_lhs(steps), h_rhs(steps), y_lhs(steps), y_rhs(steps);
  for (std::size_t t = 1; t <= steps; ++t) {
    const double rt = std::pow(rho, static_cast<double>(t));
    const double state_bound = rt * h0_norm + (1.0 - rt) / (1.0 - rho) * u_bound;
    h_lhs[t - 1] = norm2(moe.trajectory.at(t));
    h_rhs[t - 1] = state_bound;
    y_lhs[t - 1] = norm2(moe.y.row(t - 1));
    y_rhs[t - 1] = c_bound * state_bound;
  }
  return {make_bound_report(std::move(h_lhs), std::move(h_rhs), eps),
          make_bound_report(std::move(y_lhs), std::move(y_rhs), eps)};
}

EqualityReport check_equality_regime(const MoeInstance& inst) {
  require_zero_state(inst, "check_equality_regime");
  const auto& plan = inst.plan;
  for (std::size_t t = 1; t < plan.steps(); ++t) {
    if (plan.active[t] != plan.active[0]) throw PreconditionError("check_equality_regime: routing is time-varying");
    for (std::size_t e = 0; e < plan.experts(); ++e)
      if (plan.pi(t, e) != plan.pi(0, e)) throw PreconditionError("check_equality_regime: routing is time-varying");
  }
  // Y_mix = (sum_e pi_e) C^T h, so equality needs unit retained mass.
  double mass = 0.0;
  for (std::size_t e : plan.active.front()) mass += plan.pi(0, e);
  if (std::abs(mass - 1.0) > 1e-12) throw PreconditionError("check_equality_regime: retained weights must sum to one");
  for (const auto& s : inst.experts)
    if (!(s.c == inst.experts.front().c)) throw PreconditionError("check_equality_regime: readouts differ across experts");

  const auto both = run_both(inst);
  EqualityReport r;
  r.max_output_dev = max_abs_diff(both.separated.y.flat(), both.mixed.y.flat());
  const std::size_t size = both.mixed.trajectory.h.slice_size();
  std::vector<double> avg(size);
  for (std::size_t t = 1; t <= both.mixed.y.rows(); ++t) {
    std::fill(avg.begin(), avg.end(), 0.0);
    for (std::size_t e = 0; e < inst.experts.size(); ++e) {
      const auto he = both.separated.trajectories[e].at(t);
      for (std::size_t i = 0; i < size; ++i) avg[i] += plan.pi(0, e) * he[i];
    }
    r.max_state_dev = std::max(r.max_state_dev, max_abs_diff(avg, both.mixed.trajectory.at(t)));
  }
  return r;
}

BoundReport check_mismatch_bound(const MoeInstance& inst, double eps) {
  require_zero_state(inst, "check_mismatch_bound");
  const auto both = run_both(inst);
  double c_max = 0.0;
  for (const auto& s : inst.experts)
    for (std::size_t t = 0; t < s.steps(); ++t) c_max = std::max(c_max, norm2(s.c.slice(t)));

  const std::size_t steps = both.mixed.y.rows();
  const std::size_t size = both.mixed.trajectory.h.slice_size();
  std::vector<double> lhs(steps), rhs(steps), diff(size), dy(both.mixed.y.cols());
  for (std::size_t t = 1; t <= steps; ++t) {
    for (std::size_t p = 0; p < dy.size(); ++p) dy[p] = both.separated.y(t - 1, p) - both.mixed.y(t - 1, p);
    lhs[t - 1] = norm2(dy);
    double sum = 0.0;
    for (std::size_t e = 0; e < inst.experts.size(); ++e) {
      const double w = inst.plan.pi(t - 1, e);
      if (w == 0.0) continue;
      const auto he = both.separated.trajectories[e].at(t);
      const auto h = both.mixed.trajectory.at(t);
      for (std::size_t i = 0; i < size; ++i) diff[i] = he[i] - h[i];
      sum += w * norm2(diff);
    }
    rhs[t - 1] = c_max * sum;
  }
  return make_bound_report(std::move(lhs), std::move(rhs), eps);
}

double mismatch_identity_residual(const MoeInstance& inst) {
  const auto both = run_both(inst);
  const std::size_t steps = both.mixed.y.rows();
  const std::size_t n = inst.transition.state_size();
  const std::size_t p = both.mixed.y.cols();
  std::vector<double> diff(n * p), contrib(p), acc(p);
  double worst = 0.0;
  for (std::size_t t = 1; t <= steps; ++t) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t e : inst.plan.active[t - 1]) {
      const auto he = both.separated.trajectories[e].at(t);
      const auto h = both.mixed.trajectory.at(t);
      for (std::size_t i = 0; i < n * p; ++i) diff[i] = he[i] - h[i];
      readout(inst.experts[e].c.slice(t - 1), diff, n, p, contrib);
      for (std::size_t ch = 0; ch < p; ++ch) acc[ch] += inst.plan.pi(t - 1, e) * contrib[ch];
    }
    for (std::size_t ch = 0; ch < p; ++ch)
      acc[ch] -= both.separated.y(t - 1, ch) - both.mixed.y(t - 1, ch);
    worst = std::max(worst, norm2(acc));
  }
  return worst;
}

double check_delta_recursion(const MoeInstance& inst) {
  const auto both = run_both(inst);
  const std::size_t steps = both.mixed.y.rows();
  const std::size_t n = inst.transition.state_size();
  const std::size_t p = both.mixed.y.cols();
  std::vector<double> d_prev(n * p), d_cur(n * p), ad(n * p), res(n * p);
  double worst = 0.0;
  for (std::size_t e = 0; e < inst.experts.size(); ++e) {
    const auto& s = inst.experts[e];
    const auto& he = both.separated.trajectories[e];
    for (std::size_t t = 1; t <= steps; ++t) {
      const auto hp = both.mixed.trajectory.at(t - 1);
      const auto hc = both.mixed.trajectory.at(t);
      const auto hep = he.at(t - 1);
      const auto hec = he.at(t);
      for (std::size_t i = 0; i < n * p; ++i) {
        d_prev[i] = hep[i] - hp[i];
        d_cur[i] = hec[i] - hc[i];
      }
      apply_transition(inst.transition, t - 1, d_prev, p, ad);
      const auto ut = both.mixed.mixed.u_tilde.slice(t - 1);
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t ch = 0; ch < p; ++ch) {
          const std::size_t i = k * p + ch;
          const double drive = s.b(t - 1, k, ch) * s.x_inj(t - 1, ch) - ut[i];
          res[i] = d_cur[i] - ad[i] - drive;
        }
      worst = std::max(worst, norm2(res));
    }
  }
  return worst;
}

std::vector<double> uniform_grid(double lo, double hi, std::size_t points) {
  if (points < 2) throw InvalidInput("uniform_grid: need at least two points");
  std::vector<double> g(points);
  for (std::size_t i = 0; i < points; ++i)
    g[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
  return g;
}

std::vector<double> polyfit(std::span<const double> x, std::span<const double> y, std::size_t degree) {
  const std::size_t m = degree + 1;
  if (x.size() != y.size() || x.size() < m) throw InvalidInput("polyfit: need at least degree + 1 points");
  // Fit in the scaled variable x / s for conditioning, then unscale.
  double s = max_abs(x);
  if (s == 0.0) s = 1.0;
  Matrix gram(m, m);
  std::vector<double> rhs(m, 0.0), pw(m);
  for (std::size_t i = 0; i < x.size(); ++i) {
    pw[0] = 1.0;
    for (std::size_t k = 1; k < m; ++k) pw[k] = pw[k - 1] * (x[i] / s);
    for (std::size_t a = 0; a < m; ++a) {
      rhs[a] += pw[a] * y[i];
      for (std::size_t b = 0; b < m; ++b) gram(a, b) += pw[a] * pw[b];
    }
  }
  auto c = solve_spd(std::move(gram), std::move(rhs));
  double scale = 1.0;
  for (std::size_t k = 0; k < m; ++k, scale *= s) c[k] /= scale;
  return c;
}

double polyval(std::span<const double> coeffs, double x) {
  double v = 0.0;
  for (std::size_t k = coeffs.size(); k-- > 0;) v = v * x + coeffs[k];
  return v;
}

ExpressivityResult expressivity_demo(std::span<const double> grid) {
  // Experts ignore x: expert 0 injects 0, expert 1 injects 1, both read out 1.
  ExpertParams params{1, 1, {}};
  for (double inj : {0.0, 1.0}) {
    ExpertProjection ex{Matrix(1, 1), Matrix(1, 1), Matrix(1, 1), {inj}, {1.0}, {1.0}};
    params.experts.push_back(std::move(ex));
  }
  // Logits g = (0, x).
  RouterParams router{Matrix(2, 1), {0.0, 0.0}};
  router.weights(1, 0) = 1.0;
  const auto transition = TransitionSpec::dense(Matrix(1, 1));

  ExpressivityResult r;
  r.grid.assign(grid.begin(), grid.end());
  for (double x : grid) {
    const SequenceBatch batch(Matrix(1, 1, x));
    const auto plan = softmax_route(router_logits(router, batch));
    const auto out = moe_param_forward(params, transition, plan, batch);
    const double y = out.y(0, 0);
    const double sig = 1.0 / (1.0 + std::exp(-x));
    r.y_moe.push_back(y);
    r.sigmoid.push_back(sig);
    r.max_sigmoid_error = std::max(r.max_sigmoid_error, std::abs(y - sig));
  }
  r.poly_coeffs = polyfit(r.grid, r.sigmoid, 3);
  for (std::size_t i = 0; i < r.grid.size(); ++i)
    r.polynomial_gap = std::max(r.polynomial_gap, std::abs(polyval(r.poly_coeffs, r.grid[i]) - r.sigmoid[i]));
  return r;
}

}  // namespace moessm

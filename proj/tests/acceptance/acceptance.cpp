// One PASS/FAIL line per acceptance criterion; exit status 0 iff all pass.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "moessm/cost.hpp"
#include "moessm/error.hpp"
#include "moessm/grad.hpp"
#include "moessm/report.hpp"
#include "moessm/ssd.hpp"
#include "moessm/ssm.hpp"
#include "moessm/sweep.hpp"
#include "moessm/theory.hpp"
#include "moessm/verify.hpp"

using namespace moessm;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = true;
  std::string detail;
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

RngInstanceSpec spec(std::uint64_t seed, Dims dims, double rho = 0.9,
                     TransitionKind kind = TransitionKind::kDense) {
  RngInstanceSpec s;
  s.seed = seed;
  s.dims = dims;
  s.rho_target = rho;
  s.transition = kind;
  return s;
}

Outcome structure() {
  const auto start = Clock::now();
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed)
    for (auto mode : {RoutingMode::kDense, RoutingMode::kTopK})
      worst = std::max(worst, structure_deviation(make_moe_instance(spec(seed, {64, 8, 4, 4, 1}), mode)));
  const double secs = seconds_since(start);
  return {worst <= 1e-14 && secs < 5.0,
          "200 instances, max |Y_layer - Y_scan| = " + fmt("%.3g", worst) + ", " + fmt("%.2f", secs) + " s"};
}

Outcome equality() {
  double out = 0.0, state = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto r = check_equality_regime(make_equality_instance(spec(1000 + seed, {64, 8, 4, 4, 4})));
    out = std::max(out, r.max_output_dev);
    state = std::max(state, r.max_state_dev);
  }
  return {out <= 1e-10 && state <= 1e-10,
          "100 instances, max output dev " + fmt("%.3g", out) + ", weighted-state dev " + fmt("%.3g", state)};
}

Outcome mismatch() {
  double slack = INFINITY, residual = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto inst = make_moe_instance(spec(2000 + seed, {64, 8, 4, 4, 1}, 0.9), RoutingMode::kTopK);
    slack = std::min(slack, check_mismatch_bound(inst).min_slack());
    residual = std::max(residual, check_delta_recursion(inst));
  }
  return {slack >= -1e-9 && residual <= 1e-10,
          "100 top-1 instances, min slack " + fmt("%.3g", slack) + ", delta residual " + fmt("%.3g", residual)};
}

Outcome stability() {
  bool ok = true;
  std::string detail;
  for (double rho : {0.9, 0.99}) {
    auto inst = make_moe_instance(spec(3000 + static_cast<std::uint64_t>(rho * 100), {10000, 8, 4, 4, 1}, rho),
                                  RoutingMode::kTopK);
    inst.h0 = random_matrix(CounterRng(3, 1), 8, 4, 1.0);
    const auto m = moe_param_forward(inst.experts, inst.transition, inst.plan, inst.h0);
    const auto b = measure_stream_bounds(m.mixed);
    const auto r = check_stability(inst, rho, b.u_max, b.c_max);
    ok = ok && r.holds();
    detail += "rho " + fmt("%g", rho) + ": min slack state " + fmt("%.3g", r.state.min_slack()) + " output " +
              fmt("%.3g", r.output.min_slack()) + "; ";
    const auto tight = check_stability(make_tightness_instance(rho, 1.0, 10000), rho, 1.0, 1.0);
    double worst = 0.0;
    for (double v : tight.state.slack) worst = std::max(worst, std::abs(v));
    ok = ok && tight.holds() && worst <= 1e-9;
    detail += "witness |slack| " + fmt("%.3g", worst) + "; ";
  }
  detail += "T = 10000";
  return {ok, detail};
}

Outcome cost_scaling() {
  const auto start = Clock::now();
  std::size_t tuples = 0;
  bool exact = true;
  for (std::size_t t : {1, 64, 4096})
    for (std::size_t n : {1, 16, 64})
      for (std::size_t e : {1, 2, 4, 8, 64})
        for (auto kind : {TransitionKind::kDense, TransitionKind::kScalar}) {
          const Dims d{t, n, 256, e, 1};
          exact = exact && flop_model(Design::kSeparated, d, kind).recurrence ==
                               e * flop_model(Design::kMixed, d, kind).recurrence;
          ++tuples;
        }

  SweepConfig c;
  c.steps = {4096};
  c.state = {64};
  c.channels = {256};
  c.experts = {2, 4, 8};
  c.active = {1};
  c.seed = 5;
  const auto records = run_sweep(c);
  std::vector<double> mixed, separated;
  for (const auto& r : records) (r.design == Design::kMixed ? mixed : separated).push_back(r.wall_ns_median);
  const auto [lo, hi] = std::minmax_element(mixed.begin(), mixed.end());
  const double variation = (*hi - *lo) / *lo;
  const double ratio = separated.back() / separated.front();
  const double secs = seconds_since(start);
  std::string detail = std::to_string(tuples) + " tuples exact; mixed ms";
  for (double v : mixed) detail += " " + fmt("%.0f", v / 1e6);
  detail += " (spread " + fmt("%.1f", 100 * variation) + "%); separated ms";
  for (double v : separated) detail += " " + fmt("%.0f", v / 1e6);
  detail += " (E8/E2 " + fmt("%.2f", ratio) + "x); " + fmt("%.0f", secs) + " s";
  return {exact && tuples >= 20 && variation <= 0.25 && ratio >= 3.0 && secs < 300.0, detail};
}

Outcome ssd() {
  double chunked = 0.0, materialized = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto g = generate_instance(spec(4000 + seed, {256, 4, 3, 1, 1}, 0.95, TransitionKind::kScalar));
    const auto& s = g.experts[0];
    const auto ref = selective_ssm(g.transition, s, g.x).y;
    const double scale = std::max(1.0, max_abs(ref.flat()));
    for (std::size_t q : {1, 8, 32, 256}) {
      const auto r = ssd_chunked(g.transition, s, g.x, ChunkPlan::make(256, q));
      chunked = std::max(chunked, max_abs_diff(r.y.flat(), ref.flat()) / scale);
    }
    const auto small = generate_instance(spec(4100 + seed, {64, 4, 3, 1, 1}, 0.95, TransitionKind::kScalar));
    const auto m = semiseparable_apply(semiseparable_materialize(small.transition, small.experts[0]), small.x.x());
    const auto sref = selective_ssm(small.transition, small.experts[0], small.x).y;
    materialized = std::max(materialized, max_abs_diff(m.flat(), sref.flat()));
  }
  return {chunked <= 1e-8 && materialized <= 1e-12,
          "20 instances, chunked rel dev " + fmt("%.3g", chunked) + ", materialized dev " + fmt("%.3g", materialized)};
}

Outcome expressivity() {
  const auto r = expressivity_demo(uniform_grid(-8.0, 8.0, 161));
  return {r.max_sigmoid_error <= 1e-12 && r.polynomial_gap >= kPolynomialGapThreshold,
          "sigmoid error " + fmt("%.3g", r.max_sigmoid_error) + ", cubic sup error " + fmt("%.6f", r.polynomial_gap) +
              " vs threshold " + fmt("%.2f", kPolynomialGapThreshold)};
}

Outcome gradients() {
  double fd = 0.0, adj = 0.0;
  std::size_t min_coords = SIZE_MAX;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto inst = make_layer_instance(spec(5000 + seed, {12, 8, 8, 8, 8}), RoutingMode::kDense);
    FdOptions opts;
    opts.seed = seed;
    for (const auto& g : finite_diff_check(inst, opts)) {
      fd = std::max(fd, g.max_rel_error);
      min_coords = std::min(min_coords, g.coords);
    }
    auto moe_inst = make_moe_instance(spec(5000 + seed, {12, 8, 8, 8, 8}), RoutingMode::kDense);
    moe_inst.h0 = random_matrix(CounterRng(seed, 2), 8, 8, 1.0);
    for (const auto& r : adjoint_dot_tests(moe_inst, seed)) adj = std::max(adj, r.rel_error);
  }
  return {fd <= 1e-4 && min_coords >= 50 && adj <= 1e-10,
          "7 groups x 3 instances, >= " + std::to_string(min_coords) + " coords each, max fd rel err " +
              fmt("%.3g", fd) + ", adjoint rel err " + fmt("%.3g", adj)};
}

Outcome router() {
  const CounterRng rng(6000, 0);
  const std::size_t experts = 8;
  bool ok = true;
  double max_mass = 0.0;
  for (std::size_t row = 0; row < 1000; ++row) {
    Matrix g(1, experts);
    for (std::size_t e = 0; e < experts; ++e) g(0, e) = 2.0 * rng.normal(row * experts + e);
    const auto dense = softmax_route(g);
    Matrix shifted = g;
    const double c = 10.0 * rng.normal(1000000 + row);
    for (double& v : shifted.flat()) v += c;
    const auto dense_shifted = softmax_route(shifted);
    for (std::size_t k = 1; k <= experts; ++k) {
      const auto p = topk_mask(dense, k);
      std::size_t kept = 0;
      double mass = 0.0;
      for (std::size_t e = 0; e < experts; ++e) {
        kept += p.pi(0, e) != 0.0;
        mass += p.pi(0, e);
        if (p.pi(0, e) != 0.0) ok = ok && p.pi(0, e) == dense.pi(0, e);
      }
      ok = ok && kept == std::min(k, experts) && p.active[0].size() == std::min(k, experts);
      if (k < experts) {
        ok = ok && mass < 1.0;
        max_mass = std::max(max_mass, mass);
      }
      ok = ok && topk_mask(dense_shifted, k).active == p.active;
    }
  }
  bool rejects = false;
  try {
    (void)topk_mask(RoutingPlan::dense(Matrix(1, 2, 0.5)), 3);
  } catch (const InvalidInput&) {
    rejects = true;
  }
  return {ok && rejects, "1000 rows x k = 1..8, max retained mass for k < E " + fmt("%.6f", max_mass) +
                             ", shift-invariant active sets, k > E rejected"};
}

Outcome cli_contract() {
  std::ostringstream o1, e1, o2, e2;
  const int c1 = cli::run({"verify", "--seed", "7"}, o1, e1);
  const int c2 = cli::run({"verify", "--seed", "7"}, o2, e2);
  const bool identical = o1.str() == o2.str() && !o1.str().empty();

  SweepConfig c;
  c.steps = {16};
  c.state = {4};
  c.channels = {3};
  c.experts = {2, 4};
  c.active = {1, 2};
  const auto records = run_sweep(c);
  std::ostringstream csv;
  write_bench_csv(csv, records);
  const bool bench_rt = parse_bench_csv(csv.str()) == records;

  std::ostringstream vcsv;
  const auto vrec = run_verification({7, 5});
  write_verification_csv(vcsv, vrec);
  const bool verify_rt = parse_verification_csv(vcsv.str()) == vrec;
  return {c1 == 0 && c2 == 0 && identical && bench_rt && verify_rt,
          "verify exit codes " + std::to_string(c1) + "/" + std::to_string(c2) + ", report bytes " +
              (identical ? "identical" : "differ") + ", csv round trip " + (bench_rt && verify_rt ? "exact" : "lossy")};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"single-recurrence structure", structure},
      {"equality regime", equality},
      {"mismatch bound", mismatch},
      {"stability bound", stability},
      {"cost model and timing scaling", cost_scaling},
      {"chunked scan duality", ssd},
      {"expressivity construction", expressivity},
      {"gradients", gradients},
      {"router contracts", router},
      {"command-line contract", cli_contract},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::printf("%s  criterion %2zu  %-30s %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first,
                o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}

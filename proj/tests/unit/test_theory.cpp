#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "moessm/error.hpp"
#include "moessm/theory.hpp"

using namespace moessm;

TEST_CASE("structure holds for dense, top-1 and unnormalized weights") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto spec = testing::spec(seed, {64, 8, 4, 4, 1});
    CHECK(check_structure(make_moe_instance(spec, RoutingMode::kDense)));
    CHECK(check_structure(make_moe_instance(spec, RoutingMode::kTopK)));

    auto odd = make_moe_instance(spec, RoutingMode::kDense);
    const CounterRng rng(seed, 5);
    for (std::size_t i = 0; i < odd.plan.pi.size(); ++i) odd.plan.pi.flat()[i] = rng.uniform(i) < 0.5 ? 0.0 : 5.0;
    CHECK(check_structure(odd));
    CHECK(structure_deviation(odd) == 0.0);
  }
}

TEST_CASE("stability: zero drive") {
  auto inst = make_moe_instance(testing::spec(1, {50, 3, 2, 2, 1}), RoutingMode::kDense);
  for (auto& s : inst.experts) s.x_inj = Matrix(50, 2);
  const auto r = check_stability(inst, 0.9, 0.0, 10.0);
  CHECK(r.holds());
  for (double v : r.state.lhs) CHECK(v == 0.0);
  for (double v : r.state.slack) CHECK(v == 0.0);
}

TEST_CASE("stability: constant drive attains the bound") {
  for (double rho : {0.5, 0.9, 0.99}) {
    const auto inst = make_tightness_instance(rho, 2.0, 500);
    const auto r = check_stability(inst, rho, 2.0, 1.0);
    CHECK(r.holds());
    for (std::size_t t = 0; t < 500; ++t) {
      const double closed = (1.0 - std::pow(rho, t + 1.0)) / (1.0 - rho) * 2.0;
      CHECK(r.state.lhs[t] == doctest::Approx(closed).epsilon(1e-13));
      CHECK(std::abs(r.state.slack[t]) <= 1e-9);
    }
  }
}

TEST_CASE("stability: random instances") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto inst = make_moe_instance(testing::spec(seed, {1000, 4, 3, 4, 2}, 0.9), RoutingMode::kTopK);
    inst.h0 = random_matrix(CounterRng(seed, 1), 4, 3, 2.0);
    const auto m = moe_param_forward(inst.experts, inst.transition, inst.plan, inst.h0);
    const auto b = measure_stream_bounds(m.mixed);
    const auto r = check_stability(inst, 0.9, b.u_max, b.c_max);
    CHECK(r.holds());
    CHECK(r.state.min_slack() >= 0.0);
    CHECK(r.output.min_slack() >= 0.0);
    CHECK(r.state.worst_step >= 1);
  }
}

TEST_CASE("stability: preconditions") {
  const auto inst = make_moe_instance(testing::spec(2, {10, 3, 2, 2, 1}, 0.9), RoutingMode::kDense);
  CHECK_THROWS_AS(check_stability(inst, 1.0, 100.0, 100.0), PreconditionError);
  CHECK_THROWS_AS(check_stability(inst, 0.5, 100.0, 100.0), PreconditionError);
  CHECK_THROWS_AS(check_stability(inst, 0.9, 1e-6, 100.0), PreconditionError);
  CHECK_THROWS_AS(check_stability(inst, 0.9, 100.0, 1e-6), PreconditionError);
}

TEST_CASE("equality regime") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto r = check_equality_regime(make_equality_instance(testing::spec(seed, {64, 8, 4, 4, 4})));
    CHECK(r.max_output_dev <= 1e-10);
    CHECK(r.max_state_dev <= 1e-10);
  }
  SUBCASE("one expert") {
    const auto r = check_equality_regime(make_equality_instance(testing::spec(3, {30, 4, 2, 1, 1})));
    CHECK(r.max_output_dev <= 1e-15);
  }
  SUBCASE("identical experts with arbitrary simplex weights") {
    auto inst = make_equality_instance(testing::spec(4, {30, 4, 2, 3, 3}));
    for (auto& s : inst.experts) s = inst.experts[0];
    for (std::size_t t = 0; t < 30; ++t) {
      inst.plan.pi(t, 0) = 0.2;
      inst.plan.pi(t, 1) = 0.7;
      inst.plan.pi(t, 2) = 0.1;
    }
    CHECK(check_equality_regime(inst).max_output_dev <= 1e-12);
  }
}

TEST_CASE("equality regime preconditions") {
  const auto base = make_equality_instance(testing::spec(5, {12, 3, 2, 3, 3}));
  auto varying = base;
  varying.plan.pi(5, 0) += 0.01;
  CHECK_THROWS_AS(check_equality_regime(varying), PreconditionError);
  auto readouts = base;
  readouts.experts[1].c.flat()[0] += 1.0;
  CHECK_THROWS_AS(check_equality_regime(readouts), PreconditionError);
  auto state = base;
  state.h0 = Matrix(3, 2, 1.0);
  CHECK_THROWS_AS(check_equality_regime(state), PreconditionError);
  auto topk = base;
  topk.plan = topk_mask(base.plan, 1);
  CHECK_THROWS_AS(check_equality_regime(topk), PreconditionError);
}

TEST_CASE("mismatch bound") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto inst = make_moe_instance(testing::spec(seed, {64, 8, 4, 4, 1}, 0.9), RoutingMode::kTopK);
    const auto r = check_mismatch_bound(inst);
    CHECK(r.holds);
    CHECK(r.min_slack() >= -1e-9);
    CHECK(mismatch_identity_residual(inst) <= 1e-10);
    CHECK(check_delta_recursion(inst) <= 1e-10);
  }
  SUBCASE("equality regime has a vanishing left side") {
    const auto r = check_mismatch_bound(make_equality_instance(testing::spec(6, {40, 4, 3, 3, 3})));
    for (double v : r.lhs) CHECK(v <= 1e-10);
  }
  SUBCASE("single step") {
    const auto inst = make_moe_instance(testing::spec(7, {1, 3, 2, 3, 2}, 0.9), RoutingMode::kTopK);
    CHECK(mismatch_identity_residual(inst) <= 1e-14);
  }
  SUBCASE("identical experts under uniform routing have zero deviation") {
    auto inst = make_moe_instance(testing::spec(8, {30, 3, 2, 3, 3}), RoutingMode::kDense);
    for (auto& s : inst.experts) s = inst.experts[0];
    inst.plan = RoutingPlan::dense(Matrix(30, 3, 1.0 / 3.0));
    CHECK(check_delta_recursion(inst) <= 1e-14);
    for (double v : check_mismatch_bound(inst).lhs) CHECK(v <= 1e-13);
  }
  SUBCASE("memoryless transition") {
    auto inst = make_moe_instance(testing::spec(9, {20, 3, 2, 3, 1}), RoutingMode::kTopK);
    inst.transition = TransitionSpec::dense(Matrix(3, 3));
    CHECK(check_delta_recursion(inst) == 0.0);
  }
  SUBCASE("needs a zero initial state") {
    auto inst = make_moe_instance(testing::spec(9, {20, 3, 2, 3, 1}), RoutingMode::kTopK);
    inst.h0 = Matrix(3, 2, 1.0);
    CHECK_THROWS_AS(check_mismatch_bound(inst), PreconditionError);
  }
}

TEST_CASE("expressivity construction") {
  const auto grid = uniform_grid(-8.0, 8.0, 161);
  CHECK(grid.size() == 161);
  CHECK(grid.front() == -8.0);
  CHECK(grid.back() == 8.0);
  CHECK(grid[80] == 0.0);
  const auto r = expressivity_demo(grid);
  CHECK(r.max_sigmoid_error <= 1e-12);
  CHECK(r.y_moe[80] == 0.5);
  // Reference value from an independent least-squares solve of the same grid.
  CHECK(r.polynomial_gap == doctest::Approx(0.10739281186735).epsilon(1e-10));
  CHECK(r.polynomial_gap >= kPolynomialGapThreshold);

  const std::vector<double> tails{-20.0, -10.0, 0.0, 10.0, 20.0};
  const auto t = expressivity_demo(tails);
  CHECK(std::abs(t.y_moe[0]) <= 1e-8);
  CHECK(std::abs(t.y_moe[4] - 1.0) <= 1e-8);
  CHECK_THROWS_AS(expressivity_demo(std::vector<double>{-1.0, 1.0}), InvalidInput);
}

TEST_CASE("polynomial fit recovers an exact cubic") {
  const auto x = uniform_grid(-2.0, 3.0, 30);
  std::vector<double> y;
  for (double v : x) y.push_back(1.0 - 2.0 * v + 0.5 * v * v * v);
  const auto c = polyfit(x, y, 3);
  CHECK(c[0] == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(c[1] == doctest::Approx(-2.0).epsilon(1e-10));
  CHECK(std::abs(c[2]) <= 1e-10);
  CHECK(c[3] == doctest::Approx(0.5).epsilon(1e-10));
  CHECK(polyval(c, 2.0) == doctest::Approx(1.0).epsilon(1e-10));
}

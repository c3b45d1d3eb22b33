#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "moessm/error.hpp"
#include "moessm/grad.hpp"

using namespace moessm;

TEST_CASE("zero cotangent gives zero gradients") {
  const auto inst = make_layer_instance(testing::spec(1, {6, 3, 2, 3, 3}), RoutingMode::kDense);
  const auto fwd = layer_forward(inst);
  const auto g = layer_backward(inst, fwd, Matrix(6, 2));
  CHECK(max_abs(g.scan.d_u.flat()) == 0.0);
  CHECK(max_abs(g.scan.d_c.flat()) == 0.0);
  CHECK(max_abs(g.scan.d_a.values) == 0.0);
  CHECK(max_abs(g.d_h0().flat()) == 0.0);
  CHECK(max_abs(g.d_pi().flat()) == 0.0);
  CHECK(max_abs(g.d_logits.flat()) == 0.0);
  CHECK(max_abs(g.d_router_w.flat()) == 0.0);
  CHECK(max_abs(g.d_x.flat()) == 0.0);
  for (const auto& e : g.d_experts) {
    CHECK(max_abs(e.d_wb.flat()) == 0.0);
    CHECK(max_abs(e.d_bx) == 0.0);
  }
}

TEST_CASE("memoryless adjoint") {
  const auto c = testing::random_tensor(1, 5, 3, 2);
  const auto u = testing::random_tensor(2, 5, 3, 2);
  const auto a = TransitionSpec::dense(Matrix(3, 3));
  const auto fwd = ssm_scan_sequential(a, u, c);
  Matrix dy(5, 2);
  const CounterRng rng(3, 0);
  for (std::size_t i = 0; i < dy.size(); ++i) dy.flat()[i] = rng.normal(i);
  const auto g = backward_ssm(fwd.trajectory, a, c, dy);
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t p = 0; p < 2; ++p) CHECK(g.d_u(t, n, p) == c(t, n, p) * dy(t, p));
}

TEST_CASE("two-step scalar chain rule") {
  const double a = 0.7, h0 = 0.3, u1 = 1.2, u2 = -0.4, c1 = 0.9, c2 = 1.7, w1 = 0.6, w2 = -1.1;
  Tensor3 u(2, 1, 1), c(2, 1, 1);
  u(0, 0, 0) = u1;
  u(1, 0, 0) = u2;
  c(0, 0, 0) = c1;
  c(1, 0, 0) = c2;
  const auto spec = TransitionSpec::dense(Matrix(1, 1, a));
  const auto fwd = ssm_scan_sequential(spec, u, c, Matrix(1, 1, h0));
  Matrix dy(2, 1);
  dy(0, 0) = w1;
  dy(1, 0) = w2;
  const auto g = backward_ssm(fwd.trajectory, spec, c, dy);
  const double h1 = a * h0 + u1, h2 = a * h1 + u2;
  const double lambda1 = w1 * c1 + w2 * c2 * a;
  CHECK(g.d_u(0, 0, 0) == doctest::Approx(lambda1).epsilon(1e-15));
  CHECK(g.d_u(1, 0, 0) == doctest::Approx(w2 * c2).epsilon(1e-15));
  CHECK(g.d_c(0, 0, 0) == doctest::Approx(w1 * h1).epsilon(1e-15));
  CHECK(g.d_c(1, 0, 0) == doctest::Approx(w2 * h2).epsilon(1e-15));
  CHECK(g.d_a.values[0] == doctest::Approx(w2 * c2 * h1 + lambda1 * h0).epsilon(1e-15));
  CHECK(g.d_h0(0, 0) == doctest::Approx(a * lambda1).epsilon(1e-15));

  const auto scalar = TransitionSpec::scalar_per_step({a, a}, 1);
  const auto gs = backward_ssm(ssm_scan_sequential(scalar, u, c, Matrix(1, 1, h0)).trajectory, scalar, c, dy);
  CHECK(gs.d_a.values[0] == doctest::Approx(lambda1 * h0).epsilon(1e-15));
  CHECK(gs.d_a.values[1] == doctest::Approx(w2 * c2 * h1).epsilon(1e-15));
}

TEST_CASE("single expert with unit weight passes cotangents through") {
  const auto inst = make_moe_instance(testing::spec(4, {7, 3, 2, 1, 1}), RoutingMode::kDense);
  const auto du = testing::random_tensor(5, 7, 3, 2);
  const auto dc = testing::random_tensor(6, 7, 3, 2);
  const auto g = backward_mixing(inst.experts, inst.plan, du, dc);
  CHECK(g.d_streams[0].c == dc);
  const auto& s = inst.experts[0];
  for (std::size_t t = 0; t < 7; ++t)
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t p = 0; p < 2; ++p) CHECK(g.d_streams[0].b(t, n, p) == du(t, n, p) * s.x_inj(t, p));
}

TEST_CASE("mixing weight gradient matches finite differences") {
  const auto inst = make_moe_instance(testing::spec(7, {10, 3, 2, 2, 2}), RoutingMode::kDense);
  const auto fwd = moe_param_forward(inst.experts, inst.transition, inst.plan);
  const auto sg = backward_ssm(fwd.trajectory, inst.transition, fwd.mixed.c_tilde, fwd.y);
  const auto mg = backward_mixing(inst.experts, inst.plan, sg.d_u, sg.d_c);
  const double h = 1e-6;
  for (std::size_t t = 0; t < 10; ++t)
    for (std::size_t e = 0; e < 2; ++e) {
      auto plus = inst.plan, minus = inst.plan;
      plus.pi(t, e) += h;
      minus.pi(t, e) -= h;
      const auto yp = moe_param_forward(inst.experts, inst.transition, plus).y;
      const auto ym = moe_param_forward(inst.experts, inst.transition, minus).y;
      const double numeric = (0.5 * dot(yp.flat(), yp.flat()) - 0.5 * dot(ym.flat(), ym.flat())) / (2 * h);
      CHECK(relative_error(mg.d_pi(t, e), numeric) <= 1e-6);
    }
}

TEST_CASE("finite differences over every parameter group") {
  for (auto layout : {ProjectionLayout::kFull, ProjectionLayout::kSharedAcrossChannels})
    for (auto kind : {TransitionKind::kDense, TransitionKind::kDiagonal, TransitionKind::kScalar}) {
      const auto inst = make_layer_instance(testing::spec(8, {5, 3, 2, 3, 3}, 0.9, kind), RoutingMode::kDense, layout);
      FdOptions opts;
      opts.samples_per_group = 1000;  // exhaustive at this size
      const auto groups = finite_diff_check(inst, opts);
      CHECK(groups.size() == 7);
      for (const auto& g : groups) {
        INFO(g.group);
        CHECK(g.rejected == 0);
        CHECK(g.coords > 0);
        CHECK(g.max_rel_error <= 1e-4);
      }
    }
}

TEST_CASE("finite differences under top-k routing") {
  const auto inst = make_layer_instance(testing::spec(9, {6, 3, 2, 4, 2}), RoutingMode::kTopK);
  FdOptions opts;
  opts.samples_per_group = 1000;
  for (const auto& g : finite_diff_check(inst, opts)) {
    INFO(g.group);
    CHECK(g.max_rel_error <= 1e-4);
  }
}

TEST_CASE("router logit gradient matches finite differences") {
  const auto inst = make_layer_instance(testing::spec(10, {6, 3, 2, 3, 3}), RoutingMode::kDense);
  const auto fwd = layer_forward(inst);
  const auto g = layer_backward(inst, fwd, fwd.moe.y);
  const double h = 1e-5;
  // A bias shift moves the logit of every step by the same amount.
  for (std::size_t e = 0; e < 3; ++e) {
    double analytic = 0.0;
    for (std::size_t t = 0; t < 6; ++t) analytic += g.d_logits(t, e);
    auto plus = inst, minus = inst;
    plus.router.bias[e] += h;
    minus.router.bias[e] -= h;
    const auto yp = layer_forward(plus).moe.y, ym = layer_forward(minus).moe.y;
    const double numeric = (0.5 * dot(yp.flat(), yp.flat()) - 0.5 * dot(ym.flat(), ym.flat())) / (2 * h);
    CHECK(relative_error(analytic, numeric) <= 1e-4);
  }
}

TEST_CASE("constant loss") {
  const auto inst = make_layer_instance(testing::spec(11, {5, 3, 2, 3, 3}), RoutingMode::kDense);
  const auto fwd = layer_forward(inst);
  const auto g = layer_backward(inst, fwd, loss_gradient(LossKind::kConstant, fwd.moe.y));
  CHECK(max_abs(g.d_x.flat()) == 0.0);
  CHECK(max_abs(g.scan.d_a.values) == 0.0);
  FdOptions opts;
  opts.loss = LossKind::kConstant;
  for (const auto& r : finite_diff_check(inst, opts)) CHECK(r.max_rel_error <= 1e-9);
}

TEST_CASE("adjoint dot-product tests") {
  for (std::uint64_t seed = 0; seed < 5; ++seed)
    for (auto mode : {RoutingMode::kDense, RoutingMode::kTopK}) {
      auto inst = make_moe_instance(testing::spec(seed, {12, 4, 3, 4, 2}), mode);
      inst.h0 = random_matrix(CounterRng(seed, 3), 4, 3, 1.0);
      const auto reports = adjoint_dot_tests(inst, seed);
      CHECK(reports.size() == 4);
      for (const auto& r : reports) {
        INFO(r.component);
        CHECK(r.rel_error <= 1e-10);
      }
    }
}

TEST_CASE("equality regime: mixed and separated routing gradients agree") {
  for (std::uint64_t seed = 0; seed < 5; ++seed)
    CHECK(equality_pi_gradient_gap(make_equality_instance(testing::spec(seed, {20, 4, 3, 3, 3}))) <= 1e-8);
}

TEST_CASE("backward needs a recorded trajectory") {
  const auto c = testing::random_tensor(1, 4, 2, 2);
  CHECK_THROWS_AS(backward_ssm(StateTrajectory{}, TransitionSpec::dense(Matrix(2, 2)), c, Matrix(4, 2)),
                  PreconditionError);
}

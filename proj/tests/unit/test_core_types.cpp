#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "moessm/error.hpp"
#include "moessm/instance.hpp"
#include "moessm/linalg.hpp"
#include "moessm/types.hpp"

using namespace moessm;

TEST_CASE("spectral norm of small matrices") {
  CHECK(spectral_norm(Matrix::identity(3)) == doctest::Approx(1.0).epsilon(1e-12));

  Matrix d(2, 2);
  d(0, 0) = 0.5;
  d(1, 1) = -0.9;
  CHECK(spectral_norm(d) == doctest::Approx(0.9).epsilon(1e-12));

  // Jordan block: A^T A = diag(0, 1).
  Matrix j(2, 2);
  j(0, 1) = 1.0;
  CHECK(spectral_norm(j) == doctest::Approx(1.0).epsilon(1e-12));

  CHECK(spectral_norm(Matrix(3, 3)) == 0.0);
}

TEST_CASE("spectral norm matches a 2x2 closed form") {
  Matrix a(2, 2);
  a(0, 0) = 1.0;
  a(0, 1) = 2.0;
  a(1, 0) = 3.0;
  a(1, 1) = 4.0;
  // Largest eigenvalue of A^T A = [[10, 14], [14, 20]].
  const double lambda = 15.0 + std::sqrt(25.0 + 196.0);
  CHECK(spectral_norm(a) == doctest::Approx(std::sqrt(lambda)).epsilon(1e-12));
}

TEST_CASE("spectral norm rejects bad input") {
  Matrix a(2, 2);
  a(0, 0) = NAN;
  CHECK_THROWS_AS(spectral_norm(a), InvalidInput);
  CHECK_THROWS_AS(spectral_norm(Matrix::identity(2), 0.0), InvalidInput);
}

TEST_CASE("instances are deterministic") {
  const auto s = testing::spec(42, {16, 4, 3, 3, 1});
  const auto a = generate_instance(s);
  const auto b = generate_instance(s);
  CHECK(a.x.x() == b.x.x());
  CHECK(a.router_weights == b.router_weights);
  REQUIRE(a.experts.size() == 3);
  for (std::size_t e = 0; e < 3; ++e) {
    CHECK(a.experts[e].b == b.experts[e].b);
    CHECK(a.experts[e].c == b.experts[e].c);
    CHECK(a.experts[e].x_inj == b.experts[e].x_inj);
  }
  CHECK(a.transition.dense_at(0) == b.transition.dense_at(0));

  const auto other = generate_instance(testing::spec(43, {16, 4, 3, 3, 1}));
  CHECK_FALSE(other.x.x() == a.x.x());
}

TEST_CASE("rho_target rescales the transition") {
  for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
    const auto g = generate_instance(testing::spec(seed, {4, 8, 2, 2, 1}, 0.9));
    const double sigma = spectral_norm(g.transition.dense_at(0));
    CHECK(sigma >= 0.9 * (1 - 1e-6));
    CHECK(sigma <= 0.9 * (1 + 1e-6));
  }
  for (auto kind : {TransitionKind::kDiagonal, TransitionKind::kScalar}) {
    const auto g = generate_instance(testing::spec(9, {10, 4, 2, 2, 1}, 0.7, kind));
    CHECK(g.transition.norm_bound() == doctest::Approx(0.7).epsilon(1e-12));
  }
}

TEST_CASE("zero scales give zero streams") {
  auto s = testing::spec(3, {8, 3, 2, 2, 1});
  s.scales = {0, 0, 0, 0, 0, 0};
  s.rho_target.reset();
  const auto g = generate_instance(s);
  CHECK(max_abs(g.x.x().flat()) == 0.0);
  for (const auto& e : g.experts) {
    CHECK(max_abs(e.b.flat()) == 0.0);
    CHECK(max_abs(e.c.flat()) == 0.0);
    CHECK(max_abs(e.x_inj.flat()) == 0.0);
  }
  CHECK(max_abs(g.router_weights.flat()) == 0.0);
}

TEST_CASE("instance generator validation") {
  auto s = testing::spec(0, {8, 3, 2, 2, 3});
  CHECK_THROWS_AS(generate_instance(s), InvalidInput);
  s.dims.active = 1;
  s.rho_target = 1.5;
  CHECK_THROWS_AS(generate_instance(s), InvalidInput);
  s.rho_target = 0.5;
  s.dims.steps = 0;
  CHECK_THROWS_AS(generate_instance(s), InvalidInput);
}

TEST_CASE("sequence batch and stream validation") {
  CHECK_THROWS_AS(SequenceBatch(Matrix(0, 3)), InvalidInput);
  Matrix bad(2, 2);
  bad(1, 1) = INFINITY;
  CHECK_THROWS_AS(SequenceBatch{bad}, InvalidInput);

  StreamSet s(3, 2, 2);
  CHECK_NOTHROW(s.validate());
  s.c = Tensor3(3, 2, 1);
  CHECK_THROWS_AS(s.validate(), InvalidInput);
}

TEST_CASE("transition kinds") {
  CHECK(parse_transition_kind("dense") == TransitionKind::kDense);
  CHECK(parse_transition_kind("scalar") == TransitionKind::kScalar);
  CHECK(to_string(TransitionKind::kDiagonal) == "diagonal");
  CHECK_THROWS_AS(parse_transition_kind("banded"), InvalidInput);

  const auto d = TransitionSpec::diagonal({0.5, -0.25});
  const Matrix m = d.dense_at(0);
  CHECK(m(0, 0) == 0.5);
  CHECK(m(1, 1) == -0.25);
  CHECK(m(0, 1) == 0.0);
  const auto s = TransitionSpec::scalar_per_step({0.1, 0.2}, 3);
  CHECK(s.state_size() == 3);
  CHECK(s.dense_at(1)(2, 2) == 0.2);
  CHECK_THROWS_AS(TransitionSpec::dense(Matrix(2, 3)), InvalidInput);
}

TEST_CASE("counter rng sub-streams are order independent") {
  const CounterRng root(5, 0);
  const double first = root.split(3).normal(10);
  (void)root.split(1).normal(0);
  CHECK(root.split(3).normal(10) == first);
  double mean = 0.0, sq = 0.0;
  const std::size_t n = 20000;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = root.normal(i);
    mean += v;
    sq += v * v;
  }
  mean /= n;
  CHECK(std::abs(mean) < 0.05);
  CHECK(sq / n == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("spd solve") {
  Matrix a(2, 2);
  a(0, 0) = 4;
  a(0, 1) = 1;
  a(1, 0) = 1;
  a(1, 1) = 3;
  const auto x = solve_spd(a, {1, 2});
  CHECK(x[0] == doctest::Approx(1.0 / 11.0));
  CHECK(x[1] == doctest::Approx(7.0 / 11.0));
}

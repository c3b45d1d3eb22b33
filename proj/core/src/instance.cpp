#include "moessm/instance.hpp"

#include <cmath>

#include "moessm/error.hpp"
#include "moessm/linalg.hpp"
#include "moessm/random.hpp"

namespace moessm {

namespace {

// Sub-stream ids.
enum : std::uint64_t {
  kStreamX = 1,
  kStreamA = 2,
  kStreamRouter = 3,
  kStreamExpertBase = 1000,
};

void fill_tensor(const CounterRng& rng, Tensor3& t, double scale) {
  auto f = t.flat();
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = scale == 0.0 ? 0.0 : scale * rng.normal(i);
}

TransitionSpec make_transition(const RngInstanceSpec& spec, const CounterRng& rng) {
  const auto& d = spec.dims;
  const double scale = spec.scales.a;
  switch (spec.transition) {
    case TransitionKind::kDense: {
      Matrix a = random_matrix(rng, d.state, d.state, scale / std::sqrt(static_cast<double>(d.state)));
      if (spec.rho_target) {
        const double sigma = spectral_norm(a, 1e-12);
        if (sigma > 0.0)
          for (double& v : a.flat()) v *= *spec.rho_target / sigma;
      }
      return TransitionSpec::dense(std::move(a));
    }
    case TransitionKind::kDiagonal:
    case TransitionKind::kScalar: {
      const bool diag = spec.transition == TransitionKind::kDiagonal;
      std::vector<double> a(diag ? d.state : d.steps);
      // Diagonal entries may be negative; scalar decays stay in [0, scale).
      for (std::size_t i = 0; i < a.size(); ++i)
        a[i] = diag ? rng.uniform(i, -scale, scale) : rng.uniform(i, 0.0, scale);
      if (spec.rho_target) {
        const double m = max_abs(a);
        if (m > 0.0)
          for (double& v : a) v *= *spec.rho_target / m;
      }
      return diag ? TransitionSpec::diagonal(std::move(a))
                  : TransitionSpec::scalar_per_step(std::move(a), d.state);
    }
  }
  throw InvalidInput("generate_instance: unknown transition kind");
}

}  // namespace

void RngInstanceSpec::validate() const {
  if (dims.steps == 0 || dims.state == 0 || dims.channels == 0 || dims.experts == 0)
    throw InvalidInput("RngInstanceSpec: dims must be positive");
  if (dims.active == 0 || dims.active > dims.experts)
    throw InvalidInput("RngInstanceSpec: need 1 <= k <= E");
  if (rho_target && !(*rho_target > 0.0 && *rho_target < 1.0))
    throw InvalidInput("RngInstanceSpec: rho_target must lie in (0, 1)");
  for (double s : {scales.x, scales.a, scales.b, scales.c, scales.x_inj, scales.router})
    if (!(s >= 0.0) || !std::isfinite(s)) throw InvalidInput("RngInstanceSpec: scales must be finite and >= 0");
}

Matrix random_matrix(const CounterRng& rng, std::size_t rows, std::size_t cols, double scale) {
  Matrix m(rows, cols);
  auto f = m.flat();
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = scale == 0.0 ? 0.0 : scale * rng.normal(i);
  return m;
}

GeneratedInstance generate_instance(const RngInstanceSpec& spec, bool with_streams) {
  spec.validate();
  const auto& d = spec.dims;
  const CounterRng root(spec.seed, 0);

  SequenceBatch x(random_matrix(root.split(kStreamX), d.steps, d.channels, spec.scales.x));
  TransitionSpec transition = make_transition(spec, root.split(kStreamA));

  std::vector<StreamSet> experts;
  if (with_streams) experts.reserve(d.experts);
  for (std::size_t e = 0; with_streams && e < d.experts; ++e) {
    const CounterRng er = root.split(kStreamExpertBase + e);
    StreamSet s(d.steps, d.state, d.channels);
    fill_tensor(er.split(0), s.b, spec.scales.b);
    fill_tensor(er.split(1), s.c, spec.scales.c);
    s.x_inj = random_matrix(er.split(2), d.steps, d.channels, spec.scales.x_inj);
    experts.push_back(std::move(s));
  }

  Matrix wg = random_matrix(root.split(kStreamRouter), d.experts, d.channels, spec.scales.router);
  return GeneratedInstance{std::move(x), std::move(transition), std::move(experts), std::move(wg)};
}

}  // namespace moessm

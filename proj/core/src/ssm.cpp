#include "moessm/ssm.hpp"

#include <cmath>
#include <string>

#include "moessm/error.hpp"
#include "moessm/linalg.hpp"

namespace moessm {

Discretized zoh_discretize(const DiscretizationInput& in) {
  if (!(in.delta > 0.0) || !std::isfinite(in.delta))
    throw InvalidInput("zoh_discretize: delta must be positive and finite");
  const std::size_t n = in.a_cont.size();
  if (n == 0 || in.b_cont.rows() != n) throw InvalidInput("zoh_discretize: B must be N x P");
  if (!all_finite(in.a_cont) || !all_finite(in.b_cont.flat()))
    throw InvalidInput("zoh_discretize: non-finite entry");

  Discretized out{std::vector<double>(n), Matrix(n, in.b_cont.cols())};
  for (std::size_t i = 0; i < n; ++i) {
    const double a = in.a_cont[i];
    const double z = in.delta * a;
    const double abar = std::exp(z);
    if (!std::isfinite(abar)) throw OverflowError("zoh_discretize: exp(delta * a) overflows", i);
    double gain;  // (e^{delta a} - 1) / a
    if (std::abs(z) > kZohTaylorThreshold) {
      gain = std::expm1(z) / a;
    } else {
      gain = in.delta * (1.0 + z / 2.0 + z * z / 6.0 + z * z * z / 24.0);
    }
    out.a_bar[i] = abar;
    for (std::size_t p = 0; p < in.b_cont.cols(); ++p) out.b_bar(i, p) = gain * in.b_cont(i, p);
  }
  return out;
}

void apply_transition(const TransitionSpec& a, std::size_t t, std::span<const double> h,
                      std::size_t cols, std::span<double> out) {
  const std::size_t n = a.state_size();
  if (const auto* d = a.get_if<DenseStatic>()) {
    matmul_block(d->a, h, cols, out);
  } else if (const auto* g = a.get_if<DiagonalStatic>()) {
    for (std::size_t i = 0; i < n; ++i) {
      const double ai = g->a[i];
      for (std::size_t p = 0; p < cols; ++p) out[i * cols + p] = ai * h[i * cols + p];
    }
  } else {
    const double at = a.get_if<ScalarPerStep>()->a[t];
    for (std::size_t i = 0; i < n * cols; ++i) out[i] = at * h[i];
  }
}

void apply_transition_t(const TransitionSpec& a, std::size_t t, std::span<const double> h,
                        std::size_t cols, std::span<double> out) {
  if (const auto* d = a.get_if<DenseStatic>()) {
    matmul_t_block(d->a, h, cols, out);
  } else {
    apply_transition(a, t, h, cols, out);  // symmetric
  }
}

void readout(std::span<const double> c, std::span<const double> h, std::size_t rows,
             std::size_t cols, std::span<double> y) {
  for (std::size_t p = 0; p < cols; ++p) y[p] = 0.0;
  for (std::size_t n = 0; n < rows; ++n) {
    const double* cr = c.data() + n * cols;
    const double* hr = h.data() + n * cols;
    for (std::size_t p = 0; p < cols; ++p) y[p] += cr[p] * hr[p];
  }
}

void check_initial_state(const Matrix& h0, std::size_t n, std::size_t p) {
  if (h0.size() == 0) return;
  if (h0.rows() != n || h0.cols() != p) throw InvalidInput("initial state must be N x P");
  if (!all_finite(h0.flat())) throw InvalidInput("initial state: non-finite entry");
}

ScanResult ssm_scan_sequential(const TransitionSpec& a, const Tensor3& u, const Tensor3& cs,
                               const Matrix& h0, ScanOptions opts) {
  const std::size_t steps = u.steps();
  const std::size_t n = u.rows();
  const std::size_t p = u.cols();
  if (!u.same_shape(cs)) throw InvalidInput("ssm_scan_sequential: U and Cs shapes differ");
  if (steps == 0 || p == 0) throw InvalidInput("ssm_scan_sequential: T and P must be >= 1");
  if (n != a.state_size()) throw InvalidInput("ssm_scan_sequential: state size does not match transition");
  if (const auto* s = a.get_if<ScalarPerStep>(); s && s->a.size() != steps)
    throw InvalidInput("ssm_scan_sequential: scalar transition length != T");
  check_initial_state(h0, n, p);

  ScanResult r;
  r.y = Matrix(steps, p);
  if (opts.record_trajectory) r.trajectory.h = Tensor3(steps + 1, n, p);
  std::vector<double> h(n * p, 0.0), next(n * p);
  if (h0.size() != 0) std::copy(h0.flat().begin(), h0.flat().end(), h.begin());
  if (opts.record_trajectory) std::copy(h.begin(), h.end(), r.trajectory.h.slice(0).begin());

  for (std::size_t t = 0; t < steps; ++t) {
    apply_transition(a, t, h, p, next);
    const auto ut = u.slice(t);
    for (std::size_t i = 0; i < n * p; ++i) next[i] += ut[i];
    h.swap(next);
    if (!all_finite(h)) throw NumericError("ssm_scan_sequential: non-finite state", t + 1);
    readout(cs.slice(t), h, n, p, r.y.row(t));
    if (opts.record_trajectory) std::copy(h.begin(), h.end(), r.trajectory.h.slice(t + 1).begin());
  }
  r.final_state = Matrix(n, p);
  std::copy(h.begin(), h.end(), r.final_state.flat().begin());
  return r;
}

ScanResult selective_ssm(const TransitionSpec& a, const StreamSet& streams, const SequenceBatch& x,
                         const Matrix& h0, ScanOptions opts) {
  if (!streams.b.same_shape(streams.c)) throw InvalidInput("selective_ssm: B and C shapes differ");
  if (x.steps() != streams.steps() || x.channels() != streams.channels())
    throw InvalidInput("selective_ssm: X shape does not match streams");
  Tensor3 u(streams.steps(), streams.state_size(), streams.channels());
  for (std::size_t t = 0; t < u.steps(); ++t)
    for (std::size_t n = 0; n < u.rows(); ++n)
      for (std::size_t p = 0; p < u.cols(); ++p) u(t, n, p) = streams.b(t, n, p) * x.x()(t, p);
  return ssm_scan_sequential(a, u, streams.c, h0, opts);
}

}  // namespace moessm

#include "moessm/ssd.hpp"

#include <cmath>

#include "moessm/error.hpp"
#include "moessm/ssm.hpp"

namespace moessm {

namespace {

const ScalarPerStep& require_scalar(const TransitionSpec& a, const char* who) {
  const auto* s = a.get_if<ScalarPerStep>();
  if (s == nullptr) throw UnsupportedTransition(std::string(who) + ": requires a scalar-per-step transition");
  return *s;
}

// Lower-triangular decay block D(i, j) = a_{s+j+1} ... a_{s+i} for one chunk.
Matrix decay_block(const std::vector<double>& a, std::size_t s, std::size_t len, DecayMode mode) {
  Matrix d(len, len);
  for (std::size_t i = 0; i < len; ++i) {
    d(i, i) = 1.0;
    if (mode == DecayMode::kLinear) {
      for (std::size_t j = i; j-- > 0;) d(i, j) = d(i, j + 1) * a[s + j + 1];
    } else {
      double acc = 0.0;
      for (std::size_t j = i; j-- > 0;) {
        acc += std::log(a[s + j + 1]);
        d(i, j) = std::exp(acc);
      }
    }
  }
  return d;
}

}  // namespace

ChunkPlan ChunkPlan::make(std::size_t steps, std::size_t chunk_length) {
  if (chunk_length == 0 || chunk_length > steps)
    throw InvalidInput("ChunkPlan: need 1 <= Q <= T");
  ChunkPlan plan;
  plan.chunk_length = chunk_length;
  plan.num_chunks = (steps + chunk_length - 1) / chunk_length;
  for (std::size_t m = 0; m < plan.num_chunks; ++m) plan.boundaries.push_back(m * chunk_length);
  return plan;
}

void ChunkPlan::validate(std::size_t steps) const {
  if (chunk_length == 0 || chunk_length > steps) throw InvalidInput("ChunkPlan: need 1 <= Q <= T");
  if (boundaries.size() != num_chunks || boundaries.empty() || boundaries.front() != 0)
    throw InvalidInput("ChunkPlan: boundaries must start at 0, one per chunk");
  for (std::size_t m = 1; m < boundaries.size(); ++m)
    if (boundaries[m] <= boundaries[m - 1] || boundaries[m] >= steps)
      throw InvalidInput("ChunkPlan: boundaries must be strictly increasing within [0, T)");
}

std::vector<double> chunk_decay_cumprod(const std::vector<double>& a, const ChunkPlan& plan) {
  plan.validate(a.size());
  std::vector<double> out(a.size());
  for (std::size_t m = 0; m < plan.num_chunks; ++m) {
    const std::size_t s = plan.boundaries[m];
    const std::size_t e = plan.chunk_end(m, a.size());
    double acc = 1.0;
    for (std::size_t i = s; i < e; ++i) out[i] = acc *= a[i];
  }
  return out;
}

std::vector<Matrix> semiseparable_materialize(const TransitionSpec& a, const StreamSet& streams) {
  const auto& s = require_scalar(a, "semiseparable_materialize");
  const std::size_t steps = streams.steps();
  if (steps > kMaterializeLimit) throw SizeError("semiseparable_materialize: T exceeds materialization limit");
  if (!streams.b.same_shape(streams.c)) throw InvalidInput("semiseparable_materialize: B and C shapes differ");
  if (s.a.size() != steps || streams.state_size() != a.state_size())
    throw InvalidInput("semiseparable_materialize: transition does not match streams");
  const std::size_t n = streams.state_size();
  const std::size_t p = streams.channels();

  std::vector<Matrix> m(p, Matrix(steps, steps));
  for (std::size_t i = 0; i < steps; ++i) {
    double decay = 1.0;  // a_{j+1} ... a_i
    for (std::size_t j = i + 1; j-- > 0;) {
      for (std::size_t ch = 0; ch < p; ++ch) {
        double cb = 0.0;
        for (std::size_t k = 0; k < n; ++k) cb += streams.c(i, k, ch) * streams.b(j, k, ch);
        m[ch](i, j) = decay * cb;
      }
      decay *= s.a[j];
    }
  }
  return m;
}

Matrix semiseparable_apply(const std::vector<Matrix>& m, const Matrix& x) {
  if (m.size() != x.cols()) throw InvalidInput("semiseparable_apply: channel count mismatch");
  Matrix y(x.rows(), x.cols());
  for (std::size_t ch = 0; ch < m.size(); ++ch) {
    if (m[ch].rows() != x.rows()) throw InvalidInput("semiseparable_apply: T mismatch");
    for (std::size_t i = 0; i < x.rows(); ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j <= i; ++j) acc += m[ch](i, j) * x(j, ch);
      y(i, ch) = acc;
    }
  }
  return y;
}

SsdResult ssd_chunked_injected(const TransitionSpec& a, const Tensor3& u, const Tensor3& cs,
                               const ChunkPlan& plan, const Matrix& h0, SsdOptions opts) {
  const auto& sc = require_scalar(a, "ssd_chunked");
  const std::size_t steps = u.steps();
  const std::size_t n = u.rows();
  const std::size_t p = u.cols();
  if (!u.same_shape(cs)) throw InvalidInput("ssd_chunked: U and Cs shapes differ");
  if (sc.a.size() != steps || n != a.state_size())
    throw InvalidInput("ssd_chunked: transition does not match streams");
  plan.validate(steps);
  check_initial_state(h0, n, p);
  if (opts.decay == DecayMode::kLog)
    for (double v : sc.a)
      if (v < 0.0) throw InvalidInput("ssd_chunked: log-space decay needs nonnegative a");

  SsdResult r;
  r.y = Matrix(steps, p);
  std::vector<double> h(n * p, 0.0), next(n * p);
  if (h0.size() != 0) std::copy(h0.flat().begin(), h0.flat().end(), h.begin());

  std::vector<double> inter(p), gram;
  for (std::size_t m = 0; m < plan.num_chunks; ++m) {
    const std::size_t s = plan.boundaries[m];
    const std::size_t e = plan.chunk_end(m, steps);
    const std::size_t len = e - s;

    if (len == 1) {
      // A unit chunk is one step of the recurrence.
      const double at = sc.a[s];
      const auto ut = u.slice(s);
      for (std::size_t i = 0; i < n * p; ++i) next[i] = at * h[i] + ut[i];
      h.swap(next);
      readout(cs.slice(s), h, n, p, r.y.row(s));
    } else {
      const Matrix d = decay_block(sc.a, s, len, opts.decay);
      // Cumulative decay from the chunk start: a_s ... a_{s+i}.
      std::vector<double> lead(len);
      for (std::size_t i = 0; i < len; ++i) lead[i] = sc.a[s] * d(i, 0);

      // Diagonal block: y_i += sum_{j <= i} D_ij (c_i . u_j), per channel.
      gram.assign(p, 0.0);
      for (std::size_t i = 0; i < len; ++i) {
        auto yi = r.y.row(s + i);
        const auto ci = cs.slice(s + i);
        for (std::size_t j = 0; j <= i; ++j) {
          const double dij = d(i, j);
          if (dij == 0.0) continue;
          const auto uj = u.slice(s + j);
          std::fill(gram.begin(), gram.end(), 0.0);
          for (std::size_t k = 0; k < n; ++k)
            for (std::size_t ch = 0; ch < p; ++ch) gram[ch] += ci[k * p + ch] * uj[k * p + ch];
          for (std::size_t ch = 0; ch < p; ++ch) yi[ch] += dij * gram[ch];
        }
        // Off-diagonal contribution through the carried state.
        readout(ci, h, n, p, inter);
        for (std::size_t ch = 0; ch < p; ++ch) yi[ch] += lead[i] * inter[ch];
      }

      // Carry: h <- lead_last h + sum_j D_{last, j} u_j.
      const double decay_all = lead[len - 1];
      for (std::size_t i = 0; i < n * p; ++i) next[i] = decay_all * h[i];
      for (std::size_t j = 0; j < len; ++j) {
        const double w = d(len - 1, j);
        if (w == 0.0) continue;
        const auto uj = u.slice(s + j);
        for (std::size_t i = 0; i < n * p; ++i) next[i] += w * uj[i];
      }
      h.swap(next);
    }
    if (!all_finite(h)) throw NumericError("ssd_chunked: non-finite carried state", e);
    Matrix state(n, p);
    std::copy(h.begin(), h.end(), state.flat().begin());
    r.chunk_states.push_back(std::move(state));
  }
  r.final_state = r.chunk_states.back();
  return r;
}

SsdResult ssd_chunked(const TransitionSpec& a, const StreamSet& streams, const SequenceBatch& x,
                      const ChunkPlan& plan, const Matrix& h0, SsdOptions opts) {
  if (!streams.b.same_shape(streams.c)) throw InvalidInput("ssd_chunked: B and C shapes differ");
  if (x.steps() != streams.steps() || x.channels() != streams.channels())
    throw InvalidInput("ssd_chunked: X shape does not match streams");
  Tensor3 u(streams.steps(), streams.state_size(), streams.channels());
  for (std::size_t t = 0; t < u.steps(); ++t)
    for (std::size_t k = 0; k < u.rows(); ++k)
      for (std::size_t ch = 0; ch < u.cols(); ++ch) u(t, k, ch) = streams.b(t, k, ch) * x.x()(t, ch);
  return ssd_chunked_injected(a, u, streams.c, plan, h0, opts);
}

}  // namespace moessm

#include "moessm/types.hpp"

#include <cmath>
#include <string>

#include "moessm/error.hpp"
#include "moessm/linalg.hpp"

namespace moessm {

SequenceBatch::SequenceBatch(Matrix x) : x_(std::move(x)) {
  if (x_.rows() == 0 || x_.cols() == 0) throw InvalidInput("SequenceBatch: T and P must be >= 1");
  if (!all_finite(x_.flat())) throw InvalidInput("SequenceBatch: non-finite entry");
}

std::string_view to_string(TransitionKind kind) {
  switch (kind) {
    case TransitionKind::kDense:
      return "dense";
    case TransitionKind::kDiagonal:
      return "diagonal";
    case TransitionKind::kScalar:
      return "scalar";
  }
  return "?";
}

TransitionKind parse_transition_kind(std::string_view name) {
  if (name == "dense") return TransitionKind::kDense;
  if (name == "diagonal") return TransitionKind::kDiagonal;
  if (name == "scalar") return TransitionKind::kScalar;
  throw InvalidInput("unknown transition kind '" + std::string(name) + "'");
}

TransitionSpec TransitionSpec::dense(Matrix a) {
  if (a.rows() == 0 || a.rows() != a.cols()) throw InvalidInput("dense transition must be square, N >= 1");
  if (!all_finite(a.flat())) throw InvalidInput("dense transition: non-finite entry");
  const std::size_t n = a.rows();
  return TransitionSpec(DenseStatic{std::move(a)}, n);
}

TransitionSpec TransitionSpec::diagonal(std::vector<double> a) {
  if (a.empty()) throw InvalidInput("diagonal transition: N must be >= 1");
  if (!all_finite(a)) throw InvalidInput("diagonal transition: non-finite entry");
  const std::size_t n = a.size();
  return TransitionSpec(DiagonalStatic{std::move(a)}, n);
}

TransitionSpec TransitionSpec::scalar_per_step(std::vector<double> a, std::size_t state_size) {
  if (state_size == 0) throw InvalidInput("scalar transition: N must be >= 1");
  if (a.empty()) throw InvalidInput("scalar transition: T must be >= 1");
  if (!all_finite(a)) throw InvalidInput("scalar transition: non-finite entry");
  return TransitionSpec(ScalarPerStep{std::move(a)}, state_size);
}

TransitionKind TransitionSpec::kind() const noexcept {
  switch (v_.index()) {
    case 0:
      return TransitionKind::kDense;
    case 1:
      return TransitionKind::kDiagonal;
    default:
      return TransitionKind::kScalar;
  }
}

Matrix TransitionSpec::dense_at(std::size_t t) const {
  if (const auto* d = get_if<DenseStatic>()) return d->a;
  Matrix m(state_size_, state_size_);
  if (const auto* g = get_if<DiagonalStatic>()) {
    for (std::size_t i = 0; i < state_size_; ++i) m(i, i) = g->a[i];
  } else {
    const auto& s = std::get<ScalarPerStep>(v_);
    for (std::size_t i = 0; i < state_size_; ++i) m(i, i) = s.a.at(t);
  }
  return m;
}

double TransitionSpec::norm_bound() const {
  if (const auto* d = get_if<DenseStatic>()) return spectral_norm(d->a);
  if (const auto* g = get_if<DiagonalStatic>()) return max_abs(g->a);
  return max_abs(std::get<ScalarPerStep>(v_).a);
}

void StreamSet::validate() const {
  if (!b.same_shape(c)) throw InvalidInput("StreamSet: B and C shapes differ");
  if (x_inj.rows() != b.steps() || x_inj.cols() != b.cols())
    throw InvalidInput("StreamSet: injected-input shape does not match (T, P)");
  if (!all_finite(b.flat()) || !all_finite(c.flat()) || !all_finite(x_inj.flat()))
    throw InvalidInput("StreamSet: non-finite entry");
}

Tensor3 StreamSet::injection() const {
  Tensor3 u(b.steps(), b.rows(), b.cols());
  for (std::size_t t = 0; t < b.steps(); ++t)
    for (std::size_t n = 0; n < b.rows(); ++n)
      for (std::size_t p = 0; p < b.cols(); ++p) u(t, n, p) = b(t, n, p) * x_inj(t, p);
  return u;
}

}  // namespace moessm

#pragma once

#include <cstddef>
#include <string_view>
#include <variant>
#include <vector>

#include "moessm/tensor.hpp"

namespace moessm {

/// Token features X (T x P).
class SequenceBatch {
 public:
  SequenceBatch() = default;
  explicit SequenceBatch(Matrix x);

  std::size_t steps() const noexcept { return x_.rows(); }
  std::size_t channels() const noexcept { return x_.cols(); }
  const Matrix& x() const noexcept { return x_; }
  std::span<const double> token(std::size_t t) const noexcept { return x_.row(t); }

 private:
  Matrix x_;
};

/// Static dense N x N transition.
struct DenseStatic {
  Matrix a;
};

/// Static diagonal transition, one entry per state dimension.
struct DiagonalStatic {
  std::vector<double> a;
};

/// Scalar-identity transition a_t * I, one scalar per step.
struct ScalarPerStep {
  std::vector<double> a;
};

enum class TransitionKind { kDense, kDiagonal, kScalar };

std::string_view to_string(TransitionKind kind);
TransitionKind parse_transition_kind(std::string_view name);

/// Shared transition of the recurrence in one of three structured forms.
class TransitionSpec {
 public:
  using Variant = std::variant<DenseStatic, DiagonalStatic, ScalarPerStep>;

  static TransitionSpec dense(Matrix a);
  static TransitionSpec diagonal(std::vector<double> a);
  static TransitionSpec scalar_per_step(std::vector<double> a, std::size_t state_size);

  std::size_t state_size() const noexcept { return state_size_; }
  TransitionKind kind() const noexcept;
  const Variant& variant() const noexcept { return v_; }

  template <typename T>
  const T* get_if() const noexcept {
    return std::get_if<T>(&v_);
  }

  /// Returns the equivalent dense matrix at step t (0-based).
  Matrix dense_at(std::size_t t) const;

  /// Upper bound on the induced 2-norm over all steps: spectral norm for a
  /// dense A, max |entry| for the diagonal and scalar forms.
  double norm_bound() const;

 private:
  TransitionSpec(Variant v, std::size_t n) : v_(std::move(v)), state_size_(n) {}
  Variant v_;
  std::size_t state_size_ = 0;
};

/// Injection and readout streams plus the injected inputs of one expert (or
/// of a plain selective SSM).
struct StreamSet {
  Tensor3 b;     // T x N x P
  Tensor3 c;     // T x N x P
  Matrix x_inj;  // T x P

  StreamSet() = default;
  StreamSet(std::size_t steps, std::size_t state, std::size_t channels)
      : b(steps, state, channels), c(steps, state, channels), x_inj(steps, channels) {}

  std::size_t steps() const noexcept { return b.steps(); }
  std::size_t state_size() const noexcept { return b.rows(); }
  std::size_t channels() const noexcept { return b.cols(); }

  /// Throws InvalidInput if the three members disagree or contain non-finite entries.
  void validate() const;

  /// u_{t,n,p} = b_{t,n,p} * x_{t,p}.
  Tensor3 injection() const;
};

/// Recorded states h_0 .. h_T, each N x P.
struct StateTrajectory {
  Tensor3 h;  // (T + 1) x N x P

  std::size_t steps() const noexcept { return h.steps() == 0 ? 0 : h.steps() - 1; }
  std::span<const double> at(std::size_t t) const noexcept { return h.slice(t); }
};

}  // namespace moessm

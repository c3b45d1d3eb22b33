#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace moessm {

/// Row-major dense real matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> flat() noexcept { return data_; }
  std::span<const double> flat() const noexcept { return data_; }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }
  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Dense (T, N, P) tensor stored so that each time slice is a contiguous
/// row-major N x P block.
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(std::size_t steps, std::size_t rows, std::size_t cols, double fill = 0.0)
      : steps_(steps), rows_(rows), cols_(cols), data_(steps * rows * cols, fill) {}

  std::size_t steps() const noexcept { return steps_; }
  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t slice_size() const noexcept { return rows_ * cols_; }

  double& operator()(std::size_t t, std::size_t n, std::size_t p) noexcept {
    return data_[(t * rows_ + n) * cols_ + p];
  }
  double operator()(std::size_t t, std::size_t n, std::size_t p) const noexcept {
    return data_[(t * rows_ + n) * cols_ + p];
  }

  std::span<double> slice(std::size_t t) noexcept {
    return {data_.data() + t * slice_size(), slice_size()};
  }
  std::span<const double> slice(std::size_t t) const noexcept {
    return {data_.data() + t * slice_size(), slice_size()};
  }

  std::span<double> flat() noexcept { return data_; }
  std::span<const double> flat() const noexcept { return data_; }

  bool same_shape(const Tensor3& o) const noexcept {
    return steps_ == o.steps_ && rows_ == o.rows_ && cols_ == o.cols_;
  }
  bool operator==(const Tensor3&) const = default;

 private:
  std::size_t steps_ = 0;
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Euclidean norm of a vector, or Frobenius norm of a flattened block.
inline double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

inline double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace moessm

#include "moessm/linalg.hpp"

#include <cmath>
#include <limits>

#include "moessm/error.hpp"

namespace moessm {

namespace {

// w = a^T a v
void gram_apply(const Matrix& a, std::span<const double> v, std::span<double> tmp,
                std::span<double> w) {
  gemv(a, v, tmp);
  gemv_t(a, tmp, w);
}

}  // namespace

double spectral_norm(const Matrix& a, double tol) {
  if (!(tol > 0.0)) throw InvalidInput("spectral_norm: tol must be positive");
  if (!all_finite(a.flat())) throw InvalidInput("spectral_norm: non-finite entry");
  const std::size_t rows = a.rows();
  const std::size_t cols = a.cols();
  if (rows == 0 || cols == 0) return 0.0;

  const double frob = norm2(a.flat());
  if (frob == 0.0) return 0.0;

  std::vector<double> v(cols, 1.0 / std::sqrt(static_cast<double>(cols)));
  std::vector<double> tmp(rows), w(cols);

  // Stopping on the relative change of the estimate; the factor keeps the
  // accepted error well under tol when convergence is slow.
  const double change_tol = std::max(0.01 * tol, 8.0 * std::numeric_limits<double>::epsilon());
  double prev = -1.0;
  bool restarted = false;
  for (std::size_t it = 0; it < kPowerIterationCap; ++it) {
    gram_apply(a, v, tmp, w);
    const double lambda = dot(v, w);  // Rayleigh quotient of a^T a
    const double wn = norm2(w);
    if (wn <= 1e-300 * frob * frob || !std::isfinite(wn)) {
      // Start vector in the null space of a^T a; restart from the column of
      // largest norm.
      if (restarted) return std::sqrt(std::max(lambda, 0.0));
      restarted = true;
      std::size_t best = 0;
      double best_norm = -1.0;
      for (std::size_t j = 0; j < cols; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < rows; ++i) s += a(i, j) * a(i, j);
        if (s > best_norm) best_norm = s, best = j;
      }
      std::fill(v.begin(), v.end(), 0.0);
      v[best] = 1.0;
      prev = -1.0;
      continue;
    }
    const double sigma = std::sqrt(std::max(lambda, 0.0));
    if (prev >= 0.0 && std::abs(sigma - prev) <= change_tol * sigma) return sigma;
    prev = sigma;
    for (std::size_t j = 0; j < cols; ++j) v[j] = w[j] / wn;
  }
  throw ConvergenceError("spectral_norm: power iteration did not converge", prev);
}

void matmul_block(const Matrix& a, std::span<const double> in, std::size_t cols,
                  std::span<double> out) {
  const std::size_t n = a.rows();
  const std::size_t m = a.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double* o = out.data() + i * cols;
    std::fill(o, o + cols, 0.0);
    std::size_t j = 0;
    // Four source rows per pass over the output row.
    for (; j + 4 <= m; j += 4) {
      const double a0 = a(i, j), a1 = a(i, j + 1), a2 = a(i, j + 2), a3 = a(i, j + 3);
      const double* s0 = in.data() + j * cols;
      const double* s1 = s0 + cols;
      const double* s2 = s1 + cols;
      const double* s3 = s2 + cols;
      for (std::size_t p = 0; p < cols; ++p) o[p] += a0 * s0[p] + a1 * s1[p] + a2 * s2[p] + a3 * s3[p];
    }
    for (; j < m; ++j) {
      const double aij = a(i, j);
      const double* src = in.data() + j * cols;
      for (std::size_t p = 0; p < cols; ++p) o[p] += aij * src[p];
    }
  }
}

void matmul_t_block(const Matrix& a, std::span<const double> in, std::size_t cols,
                    std::span<double> out) {
  const std::size_t n = a.rows();
  const std::size_t m = a.cols();
  std::fill(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(m * cols), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* src = in.data() + i * cols;
    for (std::size_t j = 0; j < m; ++j) {
      const double aij = a(i, j);
      if (aij == 0.0) continue;
      double* o = out.data() + j * cols;
      for (std::size_t p = 0; p < cols; ++p) o[p] += aij * src[p];
    }
  }
}

void gemv(const Matrix& m, std::span<const double> x, std::span<double> y, bool accumulate) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double s = dot(m.row(i), x);
    y[i] = accumulate ? y[i] + s : s;
  }
}

void gemv_t(const Matrix& m, std::span<const double> x, std::span<double> y, bool accumulate) {
  if (!accumulate) std::fill(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(m.cols()), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto r = m.row(i);
    const double xi = x[i];
    for (std::size_t j = 0; j < m.cols(); ++j) y[j] += r[j] * xi;
  }
}

std::vector<double> solve_spd(Matrix a, std::vector<double> b) {
  const std::size_t n = a.rows();
  if (a.cols() != n || b.size() != n) throw InvalidInput("solve_spd: shape mismatch");
  // In-place Cholesky, lower factor.
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= a(j, k) * a(j, k);
    if (!(d > 0.0)) throw InvalidInput("solve_spd: matrix not positive definite");
    a(j, j) = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= a(i, k) * a(j, k);
      a(i, j) = s / a(j, j);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= a(i, k) * b[k];
    b[i] = s / a(i, i);
  }
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= a(k, i) * b[k];
    b[i] = s / a(i, i);
  }
  return b;
}

}  // namespace moessm

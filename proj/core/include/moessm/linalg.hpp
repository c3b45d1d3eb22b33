#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "moessm/tensor.hpp"

namespace moessm {

inline constexpr std::size_t kPowerIterationCap = 10000;

/// Largest singular value of a, by power iteration on a^T a started from
/// the normalized all-ones vector. The result is within tol * sigma_max.
///
/// Throws InvalidInput on non-finite input or tol <= 0, and
/// ConvergenceError (carrying the last estimate) when the cap is reached.
double spectral_norm(const Matrix& a, double tol = 1e-12);

/// out = a * in, where in and out are N x P row-major blocks.
void matmul_block(const Matrix& a, std::span<const double> in, std::size_t cols,
                  std::span<double> out);

/// out = a^T * in for N x P row-major blocks.
void matmul_t_block(const Matrix& a, std::span<const double> in, std::size_t cols,
                    std::span<double> out);

/// y = m * x (+ y when accumulate).
void gemv(const Matrix& m, std::span<const double> x, std::span<double> y, bool accumulate = false);

/// y = m^T * x (+ y when accumulate).
void gemv_t(const Matrix& m, std::span<const double> x, std::span<double> y,
            bool accumulate = false);

/// Solves the symmetric positive definite system a x = b by Cholesky.
std::vector<double> solve_spd(Matrix a, std::vector<double> b);

}  // namespace moessm

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "moessm/instance.hpp"
#include "moessm/moe.hpp"
#include "moessm/router.hpp"

namespace moessm {

/// Bound comparisons pass when every slack is >= -kSlackTolerance.
inline constexpr double kSlackTolerance = 1e-9;

/// A mixed/separated MoE-SSM instance over given expert streams.
struct MoeInstance {
  TransitionSpec transition;
  std::vector<StreamSet> experts;
  RoutingPlan plan;
  Matrix h0;  // mixed-model initial state; empty means zero
};

enum class RoutingMode { kDense, kTopK };

/// Random instance routed by its generated linear router: softmax, then
/// top-k with k = spec.dims.active when mode is kTopK.
MoeInstance make_moe_instance(const RngInstanceSpec& spec, RoutingMode mode);

/// Random dense-routed instance satisfying the equality-regime hypothesis:
/// the softmax row of step 0 is reused for every step and every expert reads
/// out through expert 0's C stream.
MoeInstance make_equality_instance(const RngInstanceSpec& spec);

/// N = P = E = 1, A = rho, constant injection `drive`, C = 1, h0 = 0: the
/// state bound is attained with equality.
MoeInstance make_tightness_instance(double rho, double drive, std::size_t steps);

struct BoundReport {
  std::vector<double> lhs;  // one entry per step t = 1..T
  std::vector<double> rhs;
  std::vector<double> slack;
  bool holds = false;
  std::size_t worst_step = 0;  // 1-based step of minimum slack

  double min_slack() const { return slack.empty() ? 0.0 : slack[worst_step - 1]; }
};

BoundReport make_bound_report(std::vector<double> lhs, std::vector<double> rhs,
                              double eps = kSlackTolerance);

/// max |Y_moe - Y_scan| where Y_scan is one generic scan over the mixed streams.
double structure_deviation(const MoeInstance& inst);
/// True when structure_deviation <= 1e-14 * max(1, max |Y|).
bool check_structure(const MoeInstance& inst);

struct StreamBounds {
  double u_max = 0.0;  // max_t ||U~_t||_F
  double c_max = 0.0;  // max_t ||C~_t||_F
};
StreamBounds measure_stream_bounds(const MixedStreams& mixed);

struct StabilityReport {
  BoundReport state;   // ||h_t|| vs rho^t ||h0|| + (1 - rho^t) / (1 - rho) U
  BoundReport output;  // ||Y_t|| vs C times the state bound
  bool holds() const { return state.holds && output.holds; }
};

/// Throws PreconditionError unless 0 < rho < 1, the transition norm is at
/// most rho, and the measured mixed-stream norms respect the given bounds.
StabilityReport check_stability(const MoeInstance& inst, double rho, double u_bound, double c_bound,
                                double eps = kSlackTolerance);

struct EqualityReport {
  double max_output_dev = 0.0;  // max_t ||Y_sep - Y_mix||_inf
  double max_state_dev = 0.0;   // max_t ||sum_e pi_e h^(e)_t - h_t||_inf
};

/// Throws PreconditionError if routing is time-varying, the retained weights
/// do not sum to one, readouts differ across experts, or h0 is nonzero.
EqualityReport check_equality_regime(const MoeInstance& inst);

/// ||Y_sep_t - Y_mix_t|| <= C sum_e pi_{t,e} ||h^(e)_t - h_t|| per step, with
/// C = max_{t,e} ||C^(e)_t||_F. Requires h0 = 0.
BoundReport check_mismatch_bound(const MoeInstance& inst, double eps = kSlackTolerance);

/// max_t ||(Y_sep_t - Y_mix_t) - sum_e pi_{t,e} C^(e)T_t (h^(e)_t - h_t)||_2,
/// the exact rewriting the mismatch bound starts from.
double mismatch_identity_residual(const MoeInstance& inst);

/// max_{t,e} ||d_t - A d_{t-1} - (B^(e)_t x^(e)_t - U~_t)||_F with d = h^(e) - h.
double check_delta_recursion(const MoeInstance& inst);

struct ExpressivityResult {
  std::vector<double> grid;
  std::vector<double> y_moe;
  std::vector<double> sigmoid;
  double max_sigmoid_error = 0.0;  // max |y_moe - sigmoid|
  std::vector<double> poly_coeffs;  // best cubic, ascending powers
  double polynomial_gap = 0.0;      // max |p(x) - sigmoid(x)| on the grid
};

/// Two-expert, one-step construction whose output is the logistic sigmoid,
/// evaluated through the router and layer code paths, plus the sup error of
/// the least-squares cubic on the same grid.
ExpressivityResult expressivity_demo(std::span<const double> grid);

std::vector<double> uniform_grid(double lo, double hi, std::size_t points);

/// Least-squares polynomial of the given degree (ascending coefficients).
std::vector<double> polyfit(std::span<const double> x, std::span<const double> y, std::size_t degree);
double polyval(std::span<const double> coeffs, double x);

inline constexpr double kPolynomialGapThreshold = 0.02;

}  // namespace moessm

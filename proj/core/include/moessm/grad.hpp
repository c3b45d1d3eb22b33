#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "moessm/instance.hpp"
#include "moessm/moe.hpp"
#include "moessm/router.hpp"
#include "moessm/theory.hpp"

namespace moessm {

/// Gradient with respect to the transition parameters, laid out like
/// TransitionSpec::parameters().
struct TransitionGrad {
  TransitionKind kind = TransitionKind::kDense;
  std::vector<double> values;
};

/// Flat parameter vector of a transition: N*N row-major entries (dense),
/// N entries (diagonal) or T entries (scalar).
std::vector<double> transition_parameters(const TransitionSpec& a);
TransitionSpec with_transition_parameters(const TransitionSpec& a, std::span<const double> values);

struct ScanGrad {
  Tensor3 d_u;  // dL/dU~
  Tensor3 d_c;  // dL/dC~
  TransitionGrad d_a;
  Matrix d_h0;
};

/// Reverse-time adjoint of h_t = A_t h_{t-1} + U_t, Y_t = C_t^T h_t.
/// Throws PreconditionError when the trajectory was not recorded.
ScanGrad backward_ssm(const StateTrajectory& traj, const TransitionSpec& a, const Tensor3& c_tilde,
                      const Matrix& dy);

struct MixingGrad {
  Matrix d_pi;                     // T x E, zero off the active sets
  std::vector<StreamSet> d_streams;  // per-expert dL/dB, dL/dC, dL/dx_inj
};

/// Adjoint of mix_streams with the active sets held fixed.
MixingGrad backward_mixing(const std::vector<StreamSet>& streams, const RoutingPlan& plan,
                           const Tensor3& d_u, const Tensor3& d_c);

struct ProjectionGrad {
  Matrix d_wb, d_wc, d_wx;
  std::vector<double> d_bb, d_bc, d_bx;
};

/// A full layer: router, expert projections, shared transition.
struct LayerInstance {
  ExpertParams experts;
  RouterParams router;
  TransitionSpec transition;
  SequenceBatch x;
  Matrix h0;
  std::size_t k = 0;  // 0 means dense routing
};

LayerInstance make_layer_instance(const RngInstanceSpec& spec, RoutingMode mode,
                                  ProjectionLayout layout = ProjectionLayout::kFull);

struct LayerForward {
  Matrix logits;
  RoutingPlan softmax;  // dense
  RoutingPlan plan;     // after top-k, equal to softmax when dense
  std::vector<StreamSet> streams;
  MoeResult moe;
};

LayerForward layer_forward(const LayerInstance& inst);

enum class LossKind { kHalfSquared, kConstant };
double loss_value(LossKind kind, const Matrix& y);
Matrix loss_gradient(LossKind kind, const Matrix& y);

/// All gradients of a layer for a given output cotangent.
struct GradBundle {
  ScanGrad scan;
  MixingGrad mixing;
  Matrix d_logits;
  std::vector<ProjectionGrad> d_experts;
  Matrix d_router_w;
  std::vector<double> d_router_b;
  Matrix d_x;

  const Tensor3& d_u_tilde() const { return scan.d_u; }
  const Tensor3& d_c_tilde() const { return scan.d_c; }
  const Matrix& d_pi() const { return mixing.d_pi; }
  const Matrix& d_h0() const { return scan.d_h0; }
};

GradBundle layer_backward(const LayerInstance& inst, const LayerForward& fwd, const Matrix& dy);

struct FdGroupReport {
  std::string group;
  std::size_t coords = 0;    // coordinates compared
  std::size_t rejected = 0;  // perturbations that flipped an active set
  double max_rel_error = 0.0;
};

struct FdOptions {
  double step = 1e-5;
  std::size_t samples_per_group = 50;  // groups this small are checked exhaustively
  std::uint64_t seed = 0;
  LossKind loss = LossKind::kHalfSquared;
};

/// Relative error with denominator max(|analytic|, |numeric|, 1e-8).
double relative_error(double analytic, double numeric);

/// Central-difference check of every parameter group of the layer: A, h0,
/// B_proj, C_proj, X_proj (weights then biases, all experts), router (W then
/// b) and the input X. Under
/// top-k routing, perturbations that change an active set are rejected and
/// replaced by another coordinate.
std::vector<FdGroupReport> finite_diff_check(const LayerInstance& inst, const FdOptions& opts = {});

struct AdjointReport {
  std::string component;
  double forward = 0.0;   // <J v, w>
  double backward = 0.0;  // <v, J^T w>
  double rel_error = 0.0;
};

/// Dot-product tests of backward_ssm and backward_mixing. J v is a central
/// directional difference; each tangent enters its map linearly or
/// quadratically so the difference is exact up to rounding.
std::vector<AdjointReport> adjoint_dot_tests(const MoeInstance& inst, std::uint64_t seed);

/// In the equality regime, compares the gradient with respect to the shared
/// routing logits (pi = softmax(g) tied across steps) through the mixed and
/// the separated forward, L = 0.5 ||Y||^2. Returns the max absolute
/// difference relative to max(1, max |grad|).
double equality_pi_gradient_gap(const MoeInstance& inst);

}  // namespace moessm

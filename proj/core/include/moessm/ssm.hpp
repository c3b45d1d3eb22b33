#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "moessm/tensor.hpp"
#include "moessm/types.hpp"

namespace moessm {

/// Continuous diagonal system h' = diag(a) h + B x with timescale delta.
struct DiscretizationInput {
  std::vector<double> a_cont;  // N
  Matrix b_cont;               // N x P
  double delta = 1.0;
};

struct Discretized {
  std::vector<double> a_bar;  // N
  Matrix b_bar;               // N x P
};

/// |delta * a| below this uses the Taylor series of (e^z - 1) / z.
inline constexpr double kZohTaylorThreshold = 1e-4;

/// Zero-order hold: a_bar = exp(delta a), b_bar = (exp(delta a) - 1) / a * b,
/// with the limit delta * b at a = 0.
Discretized zoh_discretize(const DiscretizationInput& in);

struct ScanOptions {
  bool record_trajectory = true;
};

struct ScanResult {
  Matrix y;                    // T x P
  StateTrajectory trajectory;  // empty unless recorded
  Matrix final_state;          // N x P
};

/// out = A_t * h for an N x cols state block (t is 0-based).
void apply_transition(const TransitionSpec& a, std::size_t t, std::span<const double> h,
                      std::size_t cols, std::span<double> out);

/// out = A_t^T * h.
void apply_transition_t(const TransitionSpec& a, std::size_t t, std::span<const double> h,
                        std::size_t cols, std::span<double> out);

/// y_p = <c_{., p}, h_{., p}> for every channel of an N x cols block.
void readout(std::span<const double> c, std::span<const double> h, std::size_t rows,
             std::size_t cols, std::span<double> y);

/// Exact left-to-right evaluation of h_t = A h_{t-1} + U_t, Y_t = Cs_t^T h_t,
/// channel by channel. An empty h0 means the zero state.
ScanResult ssm_scan_sequential(const TransitionSpec& a, const Tensor3& u, const Tensor3& cs,
                               const Matrix& h0 = {}, ScanOptions opts = {});

/// Selective SSM with channelwise injection U_{t,.,p} = B_{t,.,p} x_{t,p}.
/// `x` supplies the injected inputs; `streams.x_inj` is ignored.
ScanResult selective_ssm(const TransitionSpec& a, const StreamSet& streams, const SequenceBatch& x,
                         const Matrix& h0 = {}, ScanOptions opts = {});

/// Throws InvalidInput unless h0 is empty or N x P.
void check_initial_state(const Matrix& h0, std::size_t n, std::size_t p);

}  // namespace moessm

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "moessm/router.hpp"
#include "moessm/ssm.hpp"
#include "moessm/ssd.hpp"
#include "moessm/tensor.hpp"
#include "moessm/types.hpp"

namespace moessm {

/// How an expert's B/C projection output maps onto the N x P slice.
///  kFull: the projection emits all N * P entries (row n * P + p).
///  kSharedAcrossChannels: the projection emits N entries, broadcast to every
///  channel (one B_t/C_t vector per head, as in Mamba-2).
/// The two coincide when P = 1.
enum class ProjectionLayout { kFull, kSharedAcrossChannels };

/// Linear projections of one expert. Biases may be empty (zero).
struct ExpertProjection {
  Matrix wb;  // (N * P) x P or N x P
  Matrix wc;  // same layout as wb
  Matrix wx;  // P x P
  std::vector<double> bb, bc, bx;
};

struct ExpertParams {
  std::size_t state_size = 0;  // N
  std::size_t channels = 0;    // P
  std::vector<ExpertProjection> experts;

  std::size_t num_experts() const noexcept { return experts.size(); }
  ProjectionLayout layout() const;
  /// Throws InvalidInput on inconsistent shapes or non-finite entries.
  void validate() const;
};

ExpertParams generate_expert_params(std::uint64_t seed, std::size_t state, std::size_t channels,
                                    std::size_t experts, ProjectionLayout layout, double scale = 1.0);

/// Projects token x_t for channels [p0, p1): b and c receive N x (p1 - p0)
/// blocks, xe receives p1 - p0 entries. c may be empty to skip the readout
/// projection.
void project_token(const ExpertParams& params, std::size_t e, std::span<const double> xt,
                   std::size_t p0, std::size_t p1, std::span<double> b, std::span<double> c,
                   std::span<double> xe);

StreamSet expert_stream(const ExpertParams& params, std::size_t e, const SequenceBatch& x);
std::vector<StreamSet> expert_streams(const ExpertParams& params, const SequenceBatch& x);

/// Effective single-SSM inputs after parameter-space mixing.
struct MixedStreams {
  Tensor3 u_tilde;  // T x N x P
  Tensor3 c_tilde;  // T x N x P
};

/// U~_t = sum_{e in K_t} pi_{t,e} B_t^(e) x_t^(e), C~_t = sum_{e in K_t} pi_{t,e} C_t^(e).
MixedStreams mix_streams(const std::vector<StreamSet>& streams, const RoutingPlan& plan);

enum class Evaluator { kSequential, kChunked };

struct MoeOptions {
  Evaluator evaluator = Evaluator::kSequential;
  std::size_t chunk_length = kDefaultChunkLength;
  bool record_trajectory = true;
};

struct MoeResult {
  Matrix y;
  StateTrajectory trajectory;  // single N x P trajectory
  MixedStreams mixed;
  Matrix final_state;
};

/// Parameter-mixed layer over precomputed expert streams: mixes, then runs
/// exactly one recurrence over (U~, C~).
MoeResult moe_param_forward(const std::vector<StreamSet>& streams, const TransitionSpec& a,
                            const RoutingPlan& plan, const Matrix& h0 = {}, MoeOptions opts = {});

/// Parameter-mixed layer from projections. Only the active experts of each
/// step are projected.
MoeResult moe_param_forward(const ExpertParams& params, const TransitionSpec& a,
                            const RoutingPlan& plan, const SequenceBatch& x, const Matrix& h0 = {},
                            MoeOptions opts = {});

/// Parameter-mixed layer without materializing streams or states: project,
/// mix, advance and read out step by step. Channels are split across
/// `threads` workers. Returns Y.
Matrix moe_param_forward_fused(const ExpertParams& params, const TransitionSpec& a,
                               const RoutingPlan& plan, const SequenceBatch& x,
                               std::size_t threads = 1);

struct SeparatedResult {
  Matrix y;
  std::vector<StateTrajectory> trajectories;  // one per expert
  std::vector<Matrix> final_states;
};

/// Separated baseline: E independent recurrences h^(e)_t = A h^(e)_{t-1} +
/// B^(e)_t x^(e)_t (advanced every step), outputs mixed over K_t. An empty
/// h0 list means zero initial states.
SeparatedResult moe_separated_forward(const std::vector<StreamSet>& streams, const TransitionSpec& a,
                                      const RoutingPlan& plan, const std::vector<Matrix>& h0 = {},
                                      ScanOptions opts = {});

SeparatedResult moe_separated_forward(const ExpertParams& params, const TransitionSpec& a,
                                      const RoutingPlan& plan, const SequenceBatch& x,
                                      const std::vector<Matrix>& h0 = {}, ScanOptions opts = {});

/// Streaming separated baseline; experts are split across `threads` workers.
Matrix moe_separated_forward_fused(const ExpertParams& params, const TransitionSpec& a,
                                   const RoutingPlan& plan, const SequenceBatch& x,
                                   std::size_t threads = 1);

}  // namespace moessm

#pragma once

#include <cstddef>
#include <vector>

#include "moessm/tensor.hpp"
#include "moessm/types.hpp"

namespace moessm {

inline constexpr std::size_t kDefaultChunkLength = 32;
inline constexpr std::size_t kMaterializeLimit = 2048;

/// Partition of [0, T) into chunks of length Q (the last may be shorter).
struct ChunkPlan {
  std::size_t chunk_length = kDefaultChunkLength;
  std::size_t num_chunks = 0;
  std::vector<std::size_t> boundaries;  // 0-based chunk starts

  static ChunkPlan make(std::size_t steps, std::size_t chunk_length = kDefaultChunkLength);
  std::size_t chunk_end(std::size_t m, std::size_t steps) const {
    return m + 1 < num_chunks ? boundaries[m + 1] : steps;
  }
  void validate(std::size_t steps) const;
};

enum class DecayMode { kLinear, kLog };

struct SsdOptions {
  DecayMode decay = DecayMode::kLinear;
};

struct SsdResult {
  Matrix y;                           // T x P
  Matrix final_state;                 // N x P
  std::vector<Matrix> chunk_states;   // carried state after each chunk
};

/// Per-channel T x T lower-triangular matrices with
/// M_ij = c_i^T (a_{j+1} ... a_i) b_j, so that y_{., p} = M_p x_{., p}.
/// Requires a scalar-per-step transition and T <= kMaterializeLimit.
std::vector<Matrix> semiseparable_materialize(const TransitionSpec& a, const StreamSet& streams);

/// Applies materialized matrices channelwise: y_{i,p} = sum_j M_p(i, j) x_{j,p}.
Matrix semiseparable_apply(const std::vector<Matrix>& m, const Matrix& x);

/// Chunked evaluation: masked block products within chunks, a carried state
/// between chunks. Scalar-per-step transitions only.
SsdResult ssd_chunked(const TransitionSpec& a, const StreamSet& streams, const SequenceBatch& x,
                      const ChunkPlan& plan, const Matrix& h0 = {}, SsdOptions opts = {});

/// Same as ssd_chunked with the injection U_t already formed.
SsdResult ssd_chunked_injected(const TransitionSpec& a, const Tensor3& u, const Tensor3& cs,
                               const ChunkPlan& plan, const Matrix& h0 = {}, SsdOptions opts = {});

/// Within-chunk cumulative decay L_i = a_{start(i)} ... a_i for every step.
std::vector<double> chunk_decay_cumprod(const std::vector<double>& a, const ChunkPlan& plan);

}  // namespace moessm

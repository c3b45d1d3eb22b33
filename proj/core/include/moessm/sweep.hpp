#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "moessm/cost.hpp"
#include "moessm/moe.hpp"
#include "moessm/tensor.hpp"

namespace moessm {

struct SweepConfig {
  std::vector<std::size_t> steps;     // T
  std::vector<std::size_t> state;     // N
  std::vector<std::size_t> channels;  // P
  std::vector<std::size_t> experts;   // E
  std::vector<std::size_t> active;    // k
  std::vector<Design> designs{Design::kMixed, Design::kSeparated};
  std::size_t repeats = 3;
  std::size_t warmup = 1;
  std::uint64_t seed = 0;
  TransitionKind transition = TransitionKind::kDense;
  ProjectionLayout layout = ProjectionLayout::kSharedAcrossChannels;
  std::size_t threads = 1;

  /// Throws InvalidInput on an empty axis, a zero entry, repeats < 3,
  /// warmup < 1, threads < 1, or any k larger than any E.
  void validate() const;
};

struct BenchRecord {
  Design design = Design::kMixed;
  Dims dims;
  TransitionKind transition = TransitionKind::kDense;
  std::size_t threads = 1;
  FlopCounts flops;
  double wall_ns_median = 0.0;
  double wall_ns_iqr = 0.0;
  std::uint64_t checksum = 0;  // FNV-1a over the bytes of Y

  bool operator==(const BenchRecord&) const = default;
};

/// FNV-1a 64 over the IEEE-754 bytes of the entries, row-major.
std::uint64_t checksum_fnv1a(const Matrix& y);

/// Median and interquartile range (linear interpolation between order
/// statistics). Requires a non-empty sample.
double median(std::vector<double> xs);
double interquartile_range(std::vector<double> xs);

/// Times one routed forward pass (router, top-k, fused layer) per repeat for
/// every cell of the axis product and every design. Cells with k > E are
/// skipped. Each cell uses one seeded instance shared by both designs.
/// Throws SizeError naming the cell when allocation fails.
std::vector<BenchRecord> run_sweep(const SweepConfig& config,
                                   const std::function<void(const BenchRecord&)>& on_record = {});

std::string bench_csv_header();
void write_bench_csv(std::ostream& out, const std::vector<BenchRecord>& records);
/// Inverse of write_bench_csv. Throws InvalidInput on a malformed document.
std::vector<BenchRecord> parse_bench_csv(std::string_view text);

}  // namespace moessm

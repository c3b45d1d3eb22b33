#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "moessm/report.hpp"

namespace moessm {

struct VerifyOptions {
  std::uint64_t seed = 0;
  std::size_t instances = 5;  // seeded instances per randomized check
};

/// Runs every theory check, the chunked-scan equivalence, the router
/// contracts, the cost-model ratio and the gradient checks on small seeded
/// instances. Output depends only on the options.
std::vector<VerificationRecord> run_verification(const VerifyOptions& opts);

bool all_pass(const std::vector<VerificationRecord>& records);

}  // namespace moessm

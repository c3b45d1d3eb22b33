#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace moessm::cli {

/// Entry point of the moessm tool. args excludes the program name.
/// Returns 0 on success, 1 when a check fails, 2 on a usage error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace moessm::cli

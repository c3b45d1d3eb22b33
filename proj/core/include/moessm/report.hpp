#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "moessm/grad.hpp"

namespace moessm {

/// Shortest form that parses back to the same double ("%.17g"; "nan",
/// "inf" and "-inf" for non-finite values).
std::string format_double(double v);
double parse_double(std::string_view s);
std::uint64_t parse_uint(std::string_view s);

/// Fields of one comma-separated line. No quoting.
std::vector<std::string_view> split_csv_line(std::string_view line);

/// Lines of an LF-terminated document; a trailing empty line is dropped.
std::vector<std::string_view> split_lines(std::string_view text);

struct VerificationRecord {
  std::string check;
  std::uint64_t seed = 0;
  Dims dims;
  bool pass = false;
  double worst_slack = 0.0;  // min slack of a bound, or tolerance minus deviation

  bool operator==(const VerificationRecord&) const = default;
};

std::string verification_csv_header();
void write_verification_csv(std::ostream& out, const std::vector<VerificationRecord>& records);
std::vector<VerificationRecord> parse_verification_csv(std::string_view text);

/// Fixed-width PASS/FAIL table.
void write_verification_table(std::ostream& out, const std::vector<VerificationRecord>& records);

void write_fd_csv(std::ostream& out, const std::vector<FdGroupReport>& groups);

}  // namespace moessm

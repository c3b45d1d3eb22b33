#include "moessm/report.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

#include "moessm/error.hpp"

namespace moessm {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(std::string_view s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
    throw InvalidInput("not a number: '" + std::string(s) + "'");
  return v;
}

std::uint64_t parse_uint(std::string_view s) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
    throw InvalidInput("not an unsigned integer: '" + std::string(s) + "'");
  return v;
}

std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    const std::size_t nl = text.find('\n', start);
    if (nl == std::string_view::npos) {
      lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, nl - start));
    start = nl + 1;
  }
  return lines;
}

std::string verification_csv_header() {
  return "check,seed,T,N,P,E,k,pass,worst_slack";
}

void write_verification_csv(std::ostream& out, const std::vector<VerificationRecord>& records) {
  out << verification_csv_header() << '\n';
  for (const auto& r : records) {
    out << r.check << ',' << r.seed << ',' << r.dims.steps << ',' << r.dims.state << ',' << r.dims.channels
        << ',' << r.dims.experts << ',' << r.dims.active << ',' << (r.pass ? 1 : 0) << ','
        << format_double(r.worst_slack) << '\n';
  }
}

std::vector<VerificationRecord> parse_verification_csv(std::string_view text) {
  const auto lines = split_lines(text);
  if (lines.empty() || lines.front() != verification_csv_header())
    throw InvalidInput("verification csv: missing or wrong header");
  std::vector<VerificationRecord> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = split_csv_line(lines[i]);
    if (f.size() != 9) throw InvalidInput("verification csv: wrong field count on line " + std::to_string(i + 1));
    VerificationRecord r;
    r.check = std::string(f[0]);
    r.seed = parse_uint(f[1]);
    r.dims = {parse_uint(f[2]), parse_uint(f[3]), parse_uint(f[4]), parse_uint(f[5]), parse_uint(f[6])};
    if (f[7] != "0" && f[7] != "1") throw InvalidInput("verification csv: pass must be 0 or 1");
    r.pass = f[7] == "1";
    r.worst_slack = parse_double(f[8]);
    out.push_back(std::move(r));
  }
  return out;
}

void write_verification_table(std::ostream& out, const std::vector<VerificationRecord>& records) {
  char line[160];
  std::snprintf(line, sizeof line, "%-28s %20s %6s %4s %4s %3s %3s  %-24s %s\n", "check", "seed", "T", "N", "P",
                "E", "k", "worst_slack", "result");
  out << line;
  for (const auto& r : records) {
    std::snprintf(line, sizeof line, "%-28s %20llu %6zu %4zu %4zu %3zu %3zu  %-24s %s\n", r.check.c_str(),
                  static_cast<unsigned long long>(r.seed), r.dims.steps, r.dims.state, r.dims.channels,
                  r.dims.experts, r.dims.active, format_double(r.worst_slack).c_str(), r.pass ? "PASS" : "FAIL");
    out << line;
  }
}

void write_fd_csv(std::ostream& out, const std::vector<FdGroupReport>& groups) {
  out << "group,coords,rejected,max_rel_error\n";
  for (const auto& g : groups)
    out << g.group << ',' << g.coords << ',' << g.rejected << ',' << format_double(g.max_rel_error) << '\n';
}

}  // namespace moessm

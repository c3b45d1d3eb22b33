#include <doctest.h>

#include <cstdlib>
#include <sstream>

#include "cli.hpp"
#include "moessm/cost.hpp"
#include "moessm/error.hpp"
#include "moessm/report.hpp"
#include "moessm/sweep.hpp"
#include "moessm/verify.hpp"

using namespace moessm;

namespace {

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

CliRun run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

TEST_CASE("cost polynomials") {
  const CostModel dense{TransitionKind::kDense};
  const CostModel diag{TransitionKind::kDiagonal};
  const CostModel scalar{TransitionKind::kScalar};
  CHECK(dense.c_step(16, 64) == 64u * (2 * 256 + 16));
  CHECK(diag.c_step(16, 64) == 3u * 16 * 64);
  CHECK(scalar.c_step(16, 64) == 3u * 16 * 64);
  CHECK(CostModel::c_mix(2, 64, 16) == 2u * (2 * 16 * 64 + 16 * 64) + 2u * 16 * 64);
  CHECK(CostModel::c_route(4, 64) == 2u * 4 * 64 + 16);
}

TEST_CASE("cost model is monotone") {
  const CostModel m{TransitionKind::kDense};
  for (std::uint64_t n = 1; n < 10; ++n)
    for (std::uint64_t p = 1; p < 10; ++p) {
      CHECK(m.c_step(n + 1, p) > m.c_step(n, p));
      CHECK(m.c_step(n, p + 1) > m.c_step(n, p));
      CHECK(CostModel::c_mix(n + 1, p, 3) > CostModel::c_mix(n, p, 3));
      CHECK(CostModel::c_route(n + 1, p) > CostModel::c_route(n, p));
    }
}

TEST_CASE("flop model") {
  for (auto kind : {TransitionKind::kDense, TransitionKind::kDiagonal, TransitionKind::kScalar})
    for (std::size_t e : {1, 2, 5, 64})
      for (std::size_t k : {1, 2}) {
        if (k > e) continue;
        const Dims d{100, 8, 32, e, k};
        const auto m = flop_model(Design::kMixed, d, kind);
        const auto s = flop_model(Design::kSeparated, d, kind);
        CHECK(s.recurrence == e * m.recurrence);
        CHECK(m.total == m.recurrence + m.mixing + m.routing);
        CHECK(s.total == s.recurrence + s.mixing + s.routing);
      }
  const auto e2 = flop_model(Design::kMixed, {1024, 16, 64, 2, 1});
  const auto e64 = flop_model(Design::kMixed, {1024, 16, 64, 64, 1});
  CHECK(e2.recurrence == e64.recurrence);
  CHECK(e2.mixing == e64.mixing);
  CHECK(flop_model(Design::kSeparated, {0, 4, 4, 4, 1}) == FlopCounts{});
  CHECK_THROWS_AS(flop_model(Design::kMixed, {10, 4, 4, 2, 3}), InvalidInput);
}

TEST_CASE("sweep on a tiny cell is deterministic") {
  SweepConfig c;
  c.steps = {16};
  c.state = {4};
  c.channels = {3};
  c.experts = {2, 3};
  c.active = {1};
  c.seed = 5;
  const auto records = run_sweep(c);
  REQUIRE(records.size() == 4);
  for (const auto& r : records) {
    CHECK(r.wall_ns_median > 0.0);
    CHECK(r.wall_ns_iqr >= 0.0);
    CHECK(r.flops == flop_model(r.design, r.dims, r.transition));
  }
  const auto again = run_sweep(c);
  for (std::size_t i = 0; i < records.size(); ++i) CHECK(again[i].checksum == records[i].checksum);
  // Designs differ in semantics, so their outputs do too.
  CHECK(records[0].checksum != records[1].checksum);
}

TEST_CASE("sweep config validation") {
  SweepConfig c;
  c.steps = {16};
  c.state = {4};
  c.channels = {3};
  c.experts = {2};
  c.active = {1};
  CHECK_NOTHROW(c.validate());
  auto bad = c;
  bad.repeats = 2;
  CHECK_THROWS_AS(bad.validate(), InvalidInput);
  bad = c;
  bad.active = {3};
  CHECK_THROWS_AS(bad.validate(), InvalidInput);
  bad = c;
  bad.steps.clear();
  CHECK_THROWS_AS(bad.validate(), InvalidInput);
  bad = c;
  bad.warmup = 0;
  CHECK_THROWS_AS(bad.validate(), InvalidInput);
}

TEST_CASE("median and interquartile range") {
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
  CHECK(interquartile_range({1.0, 2.0, 3.0, 4.0, 5.0}) == 2.0);
  CHECK_THROWS_AS(median({}), InvalidInput);
}

TEST_CASE("bench csv round trip is exact") {
  std::vector<BenchRecord> records;
  BenchRecord r;
  r.design = Design::kSeparated;
  r.dims = {4096, 64, 256, 8, 1};
  r.transition = TransitionKind::kScalar;
  r.threads = 4;
  r.flops = flop_model(r.design, r.dims, r.transition);
  r.wall_ns_median = 1234567.5;
  r.wall_ns_iqr = 0.1 + 0.2;
  r.checksum = 0xfedcba9876543210ULL;
  records.push_back(r);
  r.design = Design::kMixed;
  r.wall_ns_median = 1e-300;
  r.checksum = 0;
  records.push_back(r);
  std::ostringstream out;
  write_bench_csv(out, records);
  CHECK(parse_bench_csv(out.str()) == records);
  CHECK(out.str().find('\r') == std::string::npos);

  std::ostringstream again;
  write_bench_csv(again, parse_bench_csv(out.str()));
  CHECK(again.str() == out.str());

  CHECK_THROWS_AS(parse_bench_csv("design,T\n"), InvalidInput);
  CHECK_THROWS_AS(parse_bench_csv(bench_csv_header() + "\nmixed,1\n"), InvalidInput);
}

TEST_CASE("verification csv round trip is exact") {
  std::vector<VerificationRecord> records{{"a", 7, {1, 2, 3, 4, 5}, true, 1.0 / 3.0},
                                          {"b", 0, {9, 8, 7, 6, 5}, false, -2.5e-17}};
  std::ostringstream out;
  write_verification_csv(out, records);
  CHECK(parse_verification_csv(out.str()) == records);
}

TEST_CASE("double formatting round trips") {
  for (double v : {0.0, -0.0, 1.0 / 3.0, 1e-310, 1.7976931348623157e308, -2.5e-17, 123456789.125})
    CHECK(parse_double(format_double(v)) == v);
  CHECK(std::isnan(parse_double(format_double(NAN))));
  CHECK_THROWS_AS(parse_double("1.0x"), InvalidInput);
}

TEST_CASE("cli: verify is deterministic and passes") {
  const auto a = run_cli({"verify", "--seed", "7"});
  const auto b = run_cli({"verify", "--seed", "7"});
  CHECK(a.code == 0);
  CHECK(a.out == b.out);
  CHECK(a.out.find("FAIL ") == std::string::npos);
  const auto csv = run_cli({"verify", "--seed", "7", "--csv"});
  const auto rows = parse_verification_csv(csv.out);
  CHECK_FALSE(rows.empty());
  CHECK(all_pass(rows));
}

TEST_CASE("cli: flops recurrence column does not depend on E") {
  const auto e4 = run_cli({"flops", "--design", "mixed", "--T", "1024", "--N", "16", "--P", "64", "--E", "4", "--k", "1"});
  const auto e8 = run_cli({"flops", "--design", "mixed", "--T", "1024", "--N", "16", "--P", "64", "--E", "8", "--k", "1"});
  REQUIRE(e4.code == 0);
  REQUIRE(e8.code == 0);
  auto recurrence = [](const std::string& out) {
    const auto lines = split_lines(out);
    return std::string(split_csv_line(lines.at(1)).at(7));
  };
  CHECK(recurrence(e4.out) == recurrence(e8.out));
  CHECK(recurrence(e4.out) == std::to_string(flop_model(Design::kMixed, {1024, 16, 64, 4, 1}).recurrence));
}

TEST_CASE("cli: usage errors exit 2") {
  CHECK(run_cli({"bench"}).code == 2);
  CHECK(run_cli({"bench", "--T", "16", "--N", "2", "--P", "2", "--E", "2"}).code == 2);
  CHECK(run_cli({"verify", "--bogus"}).code == 2);
  CHECK(run_cli({}).code == 2);
  CHECK(run_cli({"nonsense"}).code == 2);
  CHECK(run_cli({"flops", "--E", "2", "--k", "3"}).code == 2);
  const auto help = run_cli({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("verify") != std::string::npos);
}

TEST_CASE("cli: bench writes parseable csv") {
  const auto r = run_cli({"bench", "--T", "8", "--N", "2", "--P", "3", "--E", "2,3", "--k", "1", "--seed", "3"});
  REQUIRE(r.code == 0);
  const auto records = parse_bench_csv(r.out);
  CHECK(records.size() == 4);
}

TEST_CASE("cli: other subcommands") {
  const auto demo = run_cli({"demo-expressivity"});
  CHECK(demo.code == 0);
  CHECK(demo.out.find("cubic sup error = 0.1073928118673") != std::string::npos);
  CHECK(run_cli({"gradcheck", "--T", "5", "--N", "3", "--P", "2", "--E", "3"}).code == 0);
  CHECK(run_cli({"ssd-equiv", "--T", "64", "--instances", "2"}).code == 0);
}

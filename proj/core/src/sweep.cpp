#include "moessm/sweep.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdio>
#include <chrono>
#include <cmath>
#include <cstring>
#include <new>
#include <ostream>

#include "moessm/error.hpp"
#include "moessm/instance.hpp"
#include "moessm/report.hpp"
#include "moessm/router.hpp"

namespace moessm {

void SweepConfig::validate() const {
  for (const auto* axis : {&steps, &state, &channels, &experts, &active}) {
    if (axis->empty()) throw InvalidInput("sweep: every axis needs at least one value");
    if (std::find(axis->begin(), axis->end(), std::size_t{0}) != axis->end())
      throw InvalidInput("sweep: axis values must be positive");
  }
  if (designs.empty()) throw InvalidInput("sweep: no design selected");
  if (repeats < 3) throw InvalidInput("sweep: repeats must be at least 3");
  if (warmup < 1) throw InvalidInput("sweep: warmup must be at least 1");
  if (threads < 1) throw InvalidInput("sweep: threads must be at least 1");
  if (*std::max_element(active.begin(), active.end()) > *std::min_element(experts.begin(), experts.end()))
    throw InvalidInput("sweep: every k must be <= every E");
}

std::uint64_t checksum_fnv1a(const Matrix& y) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (double v : y.flat()) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

namespace {

double quantile(std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

std::string cell_name(const Dims& d) {
  return "T=" + std::to_string(d.steps) + " N=" + std::to_string(d.state) + " P=" + std::to_string(d.channels) +
         " E=" + std::to_string(d.experts) + " k=" + std::to_string(d.active);
}

}  // namespace

double median(std::vector<double> xs) {
  if (xs.empty()) throw InvalidInput("median: empty sample");
  std::sort(xs.begin(), xs.end());
  return quantile(xs, 0.5);
}

double interquartile_range(std::vector<double> xs) {
  if (xs.empty()) throw InvalidInput("interquartile_range: empty sample");
  std::sort(xs.begin(), xs.end());
  return quantile(xs, 0.75) - quantile(xs, 0.25);
}

std::vector<BenchRecord> run_sweep(const SweepConfig& config,
                                   const std::function<void(const BenchRecord&)>& on_record) {
  config.validate();
  std::vector<BenchRecord> records;
  for (std::size_t t : config.steps)
    for (std::size_t n : config.state)
      for (std::size_t p : config.channels)
        for (std::size_t e : config.experts)
          for (std::size_t k : config.active) {
            if (k > e) continue;
            const Dims dims{t, n, p, e, k};
            try {
              RngInstanceSpec spec;
              spec.seed = config.seed;
              spec.dims = dims;
              spec.rho_target = 0.9;
              spec.transition = config.transition;
              auto gen = generate_instance(spec, false);
              const RouterParams router{std::move(gen.router_weights), {}};
              const auto params = generate_expert_params(config.seed, n, p, e, config.layout);

              for (Design design : config.designs) {
                auto forward = [&] {
                  const auto plan = topk_mask(softmax_route(router_logits(router, gen.x)), k);
                  return design == Design::kMixed
                             ? moe_param_forward_fused(params, gen.transition, plan, gen.x, config.threads)
                             : moe_separated_forward_fused(params, gen.transition, plan, gen.x, config.threads);
                };
                for (std::size_t w = 0; w < config.warmup; ++w) (void)forward();
                std::vector<double> times;
                std::uint64_t checksum = 0;
                for (std::size_t r = 0; r < config.repeats; ++r) {
                  const auto start = std::chrono::steady_clock::now();
                  const Matrix y = forward();
                  const auto stop = std::chrono::steady_clock::now();
                  times.push_back(
                      std::max(1.0, static_cast<double>(
                                        std::chrono::duration_cast<std::chrono::nanoseconds>(stop - start).count())));
                  const std::uint64_t c = checksum_fnv1a(y);
                  if (r > 0 && c != checksum) throw Error("sweep: non-deterministic output at " + cell_name(dims));
                  checksum = c;
                }
                BenchRecord rec{design, dims, config.transition, config.threads,
                                flop_model(design, dims, config.transition), median(times),
                                interquartile_range(times), checksum};
                if (on_record) on_record(rec);
                records.push_back(rec);
              }
            } catch (const std::bad_alloc&) {
              throw SizeError("sweep: allocation failed at " + cell_name(dims));
            } catch (const std::length_error&) {
              throw SizeError("sweep: allocation failed at " + cell_name(dims));
            }
          }
  return records;
}

std::string bench_csv_header() {
  return "design,T,N,P,E,k,transition,threads,flops_recurrence,flops_mixing,flops_routing,flops_total,"
         "wall_ns_median,wall_ns_iqr,checksum";
}

void write_bench_csv(std::ostream& out, const std::vector<BenchRecord>& records) {
  out << bench_csv_header() << '\n';
  char hex[17];
  for (const auto& r : records) {
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(r.checksum));
    out << to_string(r.design) << ',' << r.dims.steps << ',' << r.dims.state << ',' << r.dims.channels << ','
        << r.dims.experts << ',' << r.dims.active << ',' << to_string(r.transition) << ',' << r.threads << ','
        << r.flops.recurrence << ',' << r.flops.mixing << ',' << r.flops.routing << ',' << r.flops.total << ','
        << format_double(r.wall_ns_median) << ',' << format_double(r.wall_ns_iqr) << ',' << hex << '\n';
  }
}

std::vector<BenchRecord> parse_bench_csv(std::string_view text) {
  const auto lines = split_lines(text);
  if (lines.empty() || lines.front() != bench_csv_header()) throw InvalidInput("bench csv: missing or wrong header");
  std::vector<BenchRecord> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = split_csv_line(lines[i]);
    if (f.size() != 15) throw InvalidInput("bench csv: wrong field count on line " + std::to_string(i + 1));
    BenchRecord r;
    r.design = parse_design(f[0]);
    r.dims = {parse_uint(f[1]), parse_uint(f[2]), parse_uint(f[3]), parse_uint(f[4]), parse_uint(f[5])};
    r.transition = parse_transition_kind(f[6]);
    r.threads = parse_uint(f[7]);
    r.flops = {parse_uint(f[8]), parse_uint(f[9]), parse_uint(f[10]), parse_uint(f[11])};
    r.wall_ns_median = parse_double(f[12]);
    r.wall_ns_iqr = parse_double(f[13]);
    const auto hex = f[14];
    const auto [ptr, ec] = std::from_chars(hex.data(), hex.data() + hex.size(), r.checksum, 16);
    if (ec != std::errc() || ptr != hex.data() + hex.size() || hex.size() != 16)
      throw InvalidInput("bench csv: bad checksum on line " + std::to_string(i + 1));
    out.push_back(r);
  }
  return out;
}

}  // namespace moessm

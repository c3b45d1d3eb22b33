#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "moessm/cost.hpp"
#include "moessm/error.hpp"
#include "moessm/grad.hpp"
#include "moessm/report.hpp"
#include "moessm/ssd.hpp"
#include "moessm/ssm.hpp"
#include "moessm/sweep.hpp"
#include "moessm/theory.hpp"
#include "moessm/verify.hpp"

namespace moessm::cli {

namespace {

constexpr int kExitFail = 1;
constexpr int kExitUsage = 2;


void add_seed(CLI::App* cmd, std::uint64_t& seed) {
  cmd->add_option("--seed", seed, "Random seed")->envname("MOESSM_SEED")->capture_default_str();
}


std::size_t resolve_threads(bool parallel, std::size_t threads) {
  if (threads > 0) return threads;
  return parallel ? std::max(1u, std::thread::hardware_concurrency()) : 1;
}

std::string fmt(double v) { return format_double(v); }

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Mixture-of-experts state space model kernels, checks and benchmarks", "moessm"};
  app.require_subcommand(1);

  // verify
  VerifyOptions vopt;
  bool verify_csv = false;
  auto* verify = app.add_subcommand("verify", "Run the verification suite; exit 0 iff every check passes");
  add_seed(verify, vopt.seed);
  verify->add_option("--instances", vopt.instances, "Seeded instances per randomized check")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  verify->add_flag("--csv", verify_csv, "Emit CSV instead of a table");

  // bench
  SweepConfig sweep;
  sweep.designs.clear();
  std::vector<std::string> designs{"mixed", "separated"};
  std::string out_path;
  std::string layout = "shared";
  bool parallel = false;
  std::size_t threads = 0;
  auto* bench = app.add_subcommand("bench", "Time both designs over a grid and write CSV");
  bench->add_option("--T", sweep.steps, "Sequence lengths")->delimiter(',');
  bench->add_option("--N", sweep.state, "State sizes")->delimiter(',');
  bench->add_option("--P", sweep.channels, "Channel counts")->delimiter(',');
  bench->add_option("--E", sweep.experts, "Expert counts")->delimiter(',');
  bench->add_option("--k", sweep.active, "Active experts per token")->delimiter(',');
  bench->add_option("--designs", designs, "mixed, separated")
      ->delimiter(',')
      ->check(CLI::IsMember({"mixed", "separated"}))
      ->capture_default_str();
  bench->add_option("--repeats", sweep.repeats)->capture_default_str();
  bench->add_option("--warmup", sweep.warmup)->capture_default_str();
  std::string bench_kind = "dense";
  bench->add_option("--transition", bench_kind, "dense, diagonal or scalar")
      ->check(CLI::IsMember({"dense", "diagonal", "scalar"}))
      ->capture_default_str();
  bench->add_option("--layout", layout, "B/C projection layout")
      ->check(CLI::IsMember({"shared", "full"}))
      ->capture_default_str();
  bench->add_flag("--parallel", parallel, "Split channels (mixed) or experts (separated) across threads");
  bench->add_option("--threads", threads, "Worker count (implies --parallel)");
  bench->add_option("--out", out_path, "CSV path (default: stdout)");
  add_seed(bench, sweep.seed);

  // flops
  std::string flop_design = "both";
  Dims flop_dims{1024, 16, 64, 4, 1};
  std::string flop_kind_name = "dense";
  auto* flops = app.add_subcommand("flops", "Analytic FLOP counts of one forward pass");
  flops->add_option("--design", flop_design)->check(CLI::IsMember({"mixed", "separated", "both"}))->capture_default_str();
  flops->add_option("--T", flop_dims.steps)->capture_default_str();
  flops->add_option("--N", flop_dims.state)->capture_default_str();
  flops->add_option("--P", flop_dims.channels)->capture_default_str();
  flops->add_option("--E", flop_dims.experts)->capture_default_str();
  flops->add_option("--k", flop_dims.active)->capture_default_str();
  flops->add_option("--transition", flop_kind_name)
      ->check(CLI::IsMember({"dense", "diagonal", "scalar"}))
      ->capture_default_str();

  // demo-expressivity
  double lo = -8.0, hi = 8.0;
  std::size_t points = 161;
  auto* demo = app.add_subcommand("demo-expressivity", "Two-expert sigmoid construction and the best cubic fit");
  demo->add_option("--lo", lo)->capture_default_str();
  demo->add_option("--hi", hi)->capture_default_str();
  demo->add_option("--points", points)->check(CLI::Range(2, 1000000))->capture_default_str();

  // gradcheck
  Dims grad_dims{12, 8, 8, 8, 8};
  bool grad_topk = false;
  FdOptions fd;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference and adjoint checks of the layer gradients");
  add_seed(gradcheck, fd.seed);
  gradcheck->add_option("--T", grad_dims.steps)->capture_default_str();
  gradcheck->add_option("--N", grad_dims.state)->capture_default_str();
  gradcheck->add_option("--P", grad_dims.channels)->capture_default_str();
  gradcheck->add_option("--E", grad_dims.experts)->capture_default_str();
  gradcheck->add_option("--k", grad_dims.active, "Active experts with --topk (dense uses all)")
      ->capture_default_str();
  gradcheck->add_flag("--topk", grad_topk, "Route top-k instead of dense");
  gradcheck->add_option("--step", fd.step)->capture_default_str();
  gradcheck->add_option("--samples", fd.samples_per_group, "Coordinates per group")->capture_default_str();

  // ssd-equiv
  std::uint64_t ssd_seed = 0;
  Dims ssd_dims{256, 4, 3, 1, 1};
  std::vector<std::size_t> chunks{1, 8, 32, 256};
  std::size_t ssd_instances = 5;
  auto* ssd = app.add_subcommand("ssd-equiv", "Chunked versus sequential scan deviation");
  add_seed(ssd, ssd_seed);
  ssd->add_option("--T", ssd_dims.steps)->capture_default_str();
  ssd->add_option("--N", ssd_dims.state)->capture_default_str();
  ssd->add_option("--P", ssd_dims.channels)->capture_default_str();
  ssd->add_option("--Q", chunks, "Chunk lengths")->delimiter(',');
  ssd->add_option("--instances", ssd_instances)->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*verify) {
      const auto records = run_verification(vopt);
      if (verify_csv) write_verification_csv(out, records);
      else write_verification_table(out, records);
      const bool ok = all_pass(records);
      if (!verify_csv) out << (ok ? "ALL PASS" : "FAILURES") << '\n';
      return ok ? 0 : kExitFail;
    }
    if (*bench) {
      for (const auto& d : designs) sweep.designs.push_back(parse_design(d));
      sweep.transition = parse_transition_kind(bench_kind);
      sweep.layout = layout == "full" ? ProjectionLayout::kFull : ProjectionLayout::kSharedAcrossChannels;
      sweep.threads = resolve_threads(parallel, threads);
      try {
        sweep.validate();
      } catch (const InvalidInput& e) {
        err << "error: " << e.what() << "\n\n" << bench->help();
        return kExitUsage;
      }
      std::ofstream file;
      if (!out_path.empty()) {
        file.open(out_path);
        if (!file) {
          err << "error: cannot open " << out_path << '\n';
          return kExitFail;
        }
      }
      std::ostream& sink = out_path.empty() ? out : file;
      write_bench_csv(sink, run_sweep(sweep));
      return 0;
    }
    if (*flops) {
      const TransitionKind flop_kind = parse_transition_kind(flop_kind_name);
      out << "design,T,N,P,E,k,transition,recurrence,mixing,routing,total\n";
      for (Design d : {Design::kMixed, Design::kSeparated}) {
        if (flop_design != "both" && parse_design(flop_design) != d) continue;
        const auto c = flop_model(d, flop_dims, flop_kind);
        out << to_string(d) << ',' << flop_dims.steps << ',' << flop_dims.state << ',' << flop_dims.channels << ','
            << flop_dims.experts << ',' << flop_dims.active << ',' << to_string(flop_kind) << ',' << c.recurrence
            << ',' << c.mixing << ',' << c.routing << ',' << c.total << '\n';
      }
      return 0;
    }
    if (*demo) {
      if (!(lo < hi)) {
        err << "error: need --lo < --hi\n";
        return kExitUsage;
      }
      const auto r = expressivity_demo(uniform_grid(lo, hi, points));
      out << "x,y_moe,sigmoid,cubic\n";
      for (std::size_t i = 0; i < r.grid.size(); ++i)
        out << fmt(r.grid[i]) << ',' << fmt(r.y_moe[i]) << ',' << fmt(r.sigmoid[i]) << ','
            << fmt(polyval(r.poly_coeffs, r.grid[i])) << '\n';
      out << "# max |y_moe - sigmoid| = " << fmt(r.max_sigmoid_error) << '\n';
      out << "# cubic sup error = " << fmt(r.polynomial_gap) << " (threshold " << fmt(kPolynomialGapThreshold)
          << ")\n";
      return 0;
    }
    if (*gradcheck) {
      RngInstanceSpec spec;
      spec.seed = fd.seed;
      spec.dims = grad_dims;
      if (!grad_topk) spec.dims.active = spec.dims.experts;
      spec.rho_target = 0.9;
      const auto inst = make_layer_instance(spec, grad_topk ? RoutingMode::kTopK : RoutingMode::kDense);
      const auto groups = finite_diff_check(inst, fd);
      write_fd_csv(out, groups);
      bool ok = true;
      for (const auto& g : groups) ok = ok && g.max_rel_error <= 1e-4;
      auto moe_inst = make_moe_instance(spec, grad_topk ? RoutingMode::kTopK : RoutingMode::kDense);
      out << "component,forward,backward,rel_error\n";
      for (const auto& r : adjoint_dot_tests(moe_inst, fd.seed)) {
        out << r.component << ',' << fmt(r.forward) << ',' << fmt(r.backward) << ',' << fmt(r.rel_error) << '\n';
        ok = ok && r.rel_error <= 1e-10;
      }
      return ok ? 0 : kExitFail;
    }
    if (*ssd) {
      out << "seed,T,N,P,Q,max_rel_dev\n";
      bool ok = true;
      for (std::size_t i = 0; i < ssd_instances; ++i) {
        RngInstanceSpec spec;
        spec.seed = ssd_seed + i;
        spec.dims = ssd_dims;
        spec.rho_target = 0.95;
        spec.transition = TransitionKind::kScalar;
        const auto gen = generate_instance(spec);
        const auto u = gen.experts[0].injection();
        const auto ref = ssm_scan_sequential(gen.transition, u, gen.experts[0].c, {}, {false});
        for (std::size_t q : chunks) {
          q = std::min(q, ssd_dims.steps);  // Q = T is a single chunk
          const auto r = ssd_chunked_injected(gen.transition, u, gen.experts[0].c, ChunkPlan::make(ssd_dims.steps, q));
          const double dev = max_abs_diff(r.y.flat(), ref.y.flat()) / std::max(1.0, max_abs(ref.y.flat()));
          ok = ok && dev <= 1e-8;
          out << spec.seed << ',' << ssd_dims.steps << ',' << ssd_dims.state << ',' << ssd_dims.channels << ','
              << q << ',' << fmt(dev) << '\n';
        }
      }
      return ok ? 0 : kExitFail;
    }
  } catch (const InvalidInput& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFail;
  }
  return kExitUsage;
}

}  // namespace moessm::cli

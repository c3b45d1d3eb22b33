#include "moessm/moe.hpp"

#include <cmath>
#include <string>

#include "moessm/error.hpp"
#include "moessm/instance.hpp"
#include "moessm/random.hpp"
#include "parallel.hpp"

namespace moessm {

namespace {

void check_bias(const std::vector<double>& bias, std::size_t rows, const char* what) {
  if (!bias.empty() && bias.size() != rows)
    throw InvalidInput(std::string("ExpertParams: ") + what + " bias length mismatch");
  if (!all_finite(bias)) throw InvalidInput(std::string("ExpertParams: ") + what + " bias non-finite");
}

double biased(const std::vector<double>& bias, std::size_t i) { return bias.empty() ? 0.0 : bias[i]; }

void check_plan(const RoutingPlan& plan, std::size_t steps, std::size_t experts) {
  if (plan.experts() != experts) throw InvalidInput("routing plan expert count does not match experts");
  if (plan.steps() != steps) throw InvalidInput("routing plan step count does not match sequence");
  if (plan.active.size() != steps) throw InvalidInput("routing plan: one active set per step required");
}

void check_streams(const std::vector<StreamSet>& streams, const TransitionSpec* a) {
  if (streams.empty()) throw InvalidInput("need at least one expert stream set");
  for (const auto& s : streams) {
    s.validate();
    if (!s.b.same_shape(streams.front().b)) throw InvalidInput("expert streams have different shapes");
  }
  if (a != nullptr && streams.front().state_size() != a->state_size())
    throw InvalidInput("expert stream state size does not match transition");
}

// Per-step active mask so streaming paths can test membership in O(1).
std::vector<char> active_mask(const RoutingPlan& plan) {
  std::vector<char> mask(plan.steps() * plan.experts(), 0);
  for (std::size_t t = 0; t < plan.steps(); ++t)
    for (std::size_t e : plan.active[t]) mask[t * plan.experts() + e] = 1;
  return mask;
}

}  // namespace

ProjectionLayout ExpertParams::layout() const {
  if (experts.empty() || experts.front().wb.rows() == state_size * channels)
    return ProjectionLayout::kFull;
  return ProjectionLayout::kSharedAcrossChannels;
}

void ExpertParams::validate() const {
  if (experts.empty()) throw InvalidInput("ExpertParams: need E >= 1");
  if (state_size == 0 || channels == 0) throw InvalidInput("ExpertParams: N and P must be >= 1");
  const std::size_t rows = experts.front().wb.rows();
  if (rows != state_size * channels && rows != state_size)
    throw InvalidInput("ExpertParams: B projection must have N*P or N rows");
  for (const auto& ex : experts) {
    if (ex.wb.rows() != rows || ex.wc.rows() != rows || ex.wb.cols() != channels || ex.wc.cols() != channels)
      throw InvalidInput("ExpertParams: B/C projection shape mismatch");
    if (ex.wx.rows() != channels || ex.wx.cols() != channels)
      throw InvalidInput("ExpertParams: X projection must be P x P");
    if (!all_finite(ex.wb.flat()) || !all_finite(ex.wc.flat()) || !all_finite(ex.wx.flat()))
      throw InvalidInput("ExpertParams: non-finite projection entry");
    check_bias(ex.bb, rows, "B");
    check_bias(ex.bc, rows, "C");
    check_bias(ex.bx, channels, "X");
  }
}

ExpertParams generate_expert_params(std::uint64_t seed, std::size_t state, std::size_t channels,
                                    std::size_t experts, ProjectionLayout layout, double scale) {
  if (state == 0 || channels == 0 || experts == 0) throw InvalidInput("generate_expert_params: dims must be positive");
  const CounterRng root(seed, 7);
  const std::size_t rows = layout == ProjectionLayout::kFull ? state * channels : state;
  const double s = scale / std::sqrt(static_cast<double>(channels));
  ExpertParams params{state, channels, {}};
  for (std::size_t e = 0; e < experts; ++e) {
    const CounterRng r = root.split(e);
    ExpertProjection ex;
    ex.wb = random_matrix(r.split(0), rows, channels, s);
    ex.wc = random_matrix(r.split(1), rows, channels, s);
    ex.wx = random_matrix(r.split(2), channels, channels, s);
    params.experts.push_back(std::move(ex));
  }
  return params;
}

void project_token(const ExpertParams& params, std::size_t e, std::span<const double> xt,
                   std::size_t p0, std::size_t p1, std::span<double> b, std::span<double> c,
                   std::span<double> xe) {
  const auto& ex = params.experts[e];
  const std::size_t n = params.state_size;
  const std::size_t pc = p1 - p0;
  const bool full = params.layout() == ProjectionLayout::kFull;
  const bool want_c = !c.empty();
  for (std::size_t k = 0; k < n; ++k) {
    if (full) {
      for (std::size_t p = p0; p < p1; ++p) {
        const std::size_t row = k * params.channels + p;
        b[k * pc + p - p0] = dot(ex.wb.row(row), xt) + biased(ex.bb, row);
        if (want_c) c[k * pc + p - p0] = dot(ex.wc.row(row), xt) + biased(ex.bc, row);
      }
    } else {
      const double bv = dot(ex.wb.row(k), xt) + biased(ex.bb, k);
      for (std::size_t i = 0; i < pc; ++i) b[k * pc + i] = bv;
      if (want_c) {
        const double cv = dot(ex.wc.row(k), xt) + biased(ex.bc, k);
        for (std::size_t i = 0; i < pc; ++i) c[k * pc + i] = cv;
      }
    }
  }
  for (std::size_t p = p0; p < p1; ++p) xe[p - p0] = dot(ex.wx.row(p), xt) + biased(ex.bx, p);
}

StreamSet expert_stream(const ExpertParams& params, std::size_t e, const SequenceBatch& x) {
  params.validate();
  if (e >= params.num_experts()) throw InvalidInput("expert_stream: expert index out of range");
  if (x.channels() != params.channels) throw InvalidInput("expert_stream: X has wrong channel count");
  const std::size_t p = params.channels;
  StreamSet s(x.steps(), params.state_size, p);
  for (std::size_t t = 0; t < x.steps(); ++t)
    project_token(params, e, x.token(t), 0, p, s.b.slice(t), s.c.slice(t), s.x_inj.row(t));
  return s;
}

std::vector<StreamSet> expert_streams(const ExpertParams& params, const SequenceBatch& x) {
  std::vector<StreamSet> out;
  out.reserve(params.num_experts());
  for (std::size_t e = 0; e < params.num_experts(); ++e) out.push_back(expert_stream(params, e, x));
  return out;
}

MixedStreams mix_streams(const std::vector<StreamSet>& streams, const RoutingPlan& plan) {
  check_streams(streams, nullptr);
  const auto& first = streams.front();
  check_plan(plan, first.steps(), streams.size());
  const std::size_t n = first.state_size();
  const std::size_t p = first.channels();
  MixedStreams m{Tensor3(first.steps(), n, p), Tensor3(first.steps(), n, p)};
  for (std::size_t t = 0; t < first.steps(); ++t) {
    auto u = m.u_tilde.slice(t);
    auto c = m.c_tilde.slice(t);
    for (std::size_t e : plan.active[t]) {
      const double w = plan.pi(t, e);
      const auto& s = streams[e];
      const auto bt = s.b.slice(t);
      const auto ct = s.c.slice(t);
      const auto xt = s.x_inj.row(t);
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t ch = 0; ch < p; ++ch) {
          const std::size_t i = k * p + ch;
          u[i] += w * (bt[i] * xt[ch]);
          c[i] += w * ct[i];
        }
    }
  }
  return m;
}

namespace {

MoeResult run_mixed(MixedStreams mixed, const TransitionSpec& a, const Matrix& h0, const MoeOptions& opts) {
  MoeResult r;
  if (opts.evaluator == Evaluator::kChunked) {
    const auto plan = ChunkPlan::make(mixed.u_tilde.steps(), std::min(opts.chunk_length, mixed.u_tilde.steps()));
    auto s = ssd_chunked_injected(a, mixed.u_tilde, mixed.c_tilde, plan, h0);
    r.y = std::move(s.y);
    r.final_state = std::move(s.final_state);
  } else {
    auto s = ssm_scan_sequential(a, mixed.u_tilde, mixed.c_tilde, h0, {opts.record_trajectory});
    r.y = std::move(s.y);
    r.trajectory = std::move(s.trajectory);
    r.final_state = std::move(s.final_state);
  }
  r.mixed = std::move(mixed);
  return r;
}

}  // namespace

MoeResult moe_param_forward(const std::vector<StreamSet>& streams, const TransitionSpec& a,
                            const RoutingPlan& plan, const Matrix& h0, MoeOptions opts) {
  check_streams(streams, &a);
  return run_mixed(mix_streams(streams, plan), a, h0, opts);
}

MoeResult moe_param_forward(const ExpertParams& params, const TransitionSpec& a,
                            const RoutingPlan& plan, const SequenceBatch& x, const Matrix& h0,
                            MoeOptions opts) {
  params.validate();
  if (params.state_size != a.state_size()) throw InvalidInput("moe_param_forward: N mismatch");
  if (x.channels() != params.channels) throw InvalidInput("moe_param_forward: X has wrong channel count");
  check_plan(plan, x.steps(), params.num_experts());
  const std::size_t n = params.state_size;
  const std::size_t p = params.channels;
  MixedStreams m{Tensor3(x.steps(), n, p), Tensor3(x.steps(), n, p)};
  std::vector<double> b(n * p), c(n * p), xe(p);
  for (std::size_t t = 0; t < x.steps(); ++t) {
    auto u = m.u_tilde.slice(t);
    auto ct = m.c_tilde.slice(t);
    for (std::size_t e : plan.active[t]) {
      project_token(params, e, x.token(t), 0, p, b, c, xe);
      const double w = plan.pi(t, e);
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t ch = 0; ch < p; ++ch) {
          const std::size_t i = k * p + ch;
          u[i] += w * (b[i] * xe[ch]);
          ct[i] += w * c[i];
        }
    }
  }
  return run_mixed(std::move(m), a, h0, opts);
}

Matrix moe_param_forward_fused(const ExpertParams& params, const TransitionSpec& a,
                               const RoutingPlan& plan, const SequenceBatch& x, std::size_t threads) {
  params.validate();
  if (params.state_size != a.state_size()) throw InvalidInput("moe_param_forward_fused: N mismatch");
  if (x.channels() != params.channels) throw InvalidInput("moe_param_forward_fused: X has wrong channel count");
  check_plan(plan, x.steps(), params.num_experts());
  if (const auto* s = a.get_if<ScalarPerStep>(); s && s->a.size() != x.steps())
    throw InvalidInput("moe_param_forward_fused: scalar transition length != T");
  const std::size_t n = params.state_size;
  Matrix y(x.steps(), params.channels);

  detail::parallel_ranges(params.channels, threads, [&](std::size_t, std::size_t p0, std::size_t p1) {
    const std::size_t pc = p1 - p0;
    if (pc == 0) return;
    std::vector<double> b(n * pc), c(n * pc), xe(pc), u(n * pc), ct(n * pc), h(n * pc, 0.0),
        next(n * pc), yt(pc);
    for (std::size_t t = 0; t < x.steps(); ++t) {
      std::fill(u.begin(), u.end(), 0.0);
      std::fill(ct.begin(), ct.end(), 0.0);
      for (std::size_t e : plan.active[t]) {
        project_token(params, e, x.token(t), p0, p1, b, c, xe);
        const double w = plan.pi(t, e);
        for (std::size_t k = 0; k < n; ++k)
          for (std::size_t ch = 0; ch < pc; ++ch) {
            const std::size_t i = k * pc + ch;
            u[i] += w * (b[i] * xe[ch]);
            ct[i] += w * c[i];
          }
      }
      apply_transition(a, t, h, pc, next);
      for (std::size_t i = 0; i < n * pc; ++i) next[i] += u[i];
      h.swap(next);
      if (!all_finite(h)) throw NumericError("moe_param_forward_fused: non-finite state", t + 1);
      readout(ct, h, n, pc, yt);
      for (std::size_t ch = 0; ch < pc; ++ch) y(t, p0 + ch) = yt[ch];
    }
  });
  return y;
}

namespace {

Matrix combine_outputs(const std::vector<Matrix>& per_expert, const RoutingPlan& plan) {
  const std::size_t steps = per_expert.front().rows();
  const std::size_t p = per_expert.front().cols();
  Matrix y(steps, p);
  for (std::size_t t = 0; t < steps; ++t) {
    auto yt = y.row(t);
    for (std::size_t e : plan.active[t]) {
      const double w = plan.pi(t, e);
      const auto ye = per_expert[e].row(t);
      for (std::size_t ch = 0; ch < p; ++ch) yt[ch] += w * ye[ch];
    }
  }
  return y;
}

}  // namespace

SeparatedResult moe_separated_forward(const std::vector<StreamSet>& streams, const TransitionSpec& a,
                                      const RoutingPlan& plan, const std::vector<Matrix>& h0,
                                      ScanOptions opts) {
  check_streams(streams, &a);
  check_plan(plan, streams.front().steps(), streams.size());
  if (!h0.empty() && h0.size() != streams.size())
    throw InvalidInput("moe_separated_forward: need one initial state per expert");
  SeparatedResult r;
  std::vector<Matrix> outputs;
  for (std::size_t e = 0; e < streams.size(); ++e) {
    auto s = ssm_scan_sequential(a, streams[e].injection(), streams[e].c, h0.empty() ? Matrix{} : h0[e], opts);
    outputs.push_back(std::move(s.y));
    r.trajectories.push_back(std::move(s.trajectory));
    r.final_states.push_back(std::move(s.final_state));
  }
  r.y = combine_outputs(outputs, plan);
  return r;
}

SeparatedResult moe_separated_forward(const ExpertParams& params, const TransitionSpec& a,
                                      const RoutingPlan& plan, const SequenceBatch& x,
                                      const std::vector<Matrix>& h0, ScanOptions opts) {
  return moe_separated_forward(expert_streams(params, x), a, plan, h0, opts);
}

Matrix moe_separated_forward_fused(const ExpertParams& params, const TransitionSpec& a,
                                   const RoutingPlan& plan, const SequenceBatch& x, std::size_t threads) {
  params.validate();
  if (params.state_size != a.state_size()) throw InvalidInput("moe_separated_forward_fused: N mismatch");
  if (x.channels() != params.channels) throw InvalidInput("moe_separated_forward_fused: X has wrong channel count");
  check_plan(plan, x.steps(), params.num_experts());
  if (const auto* s = a.get_if<ScalarPerStep>(); s && s->a.size() != x.steps())
    throw InvalidInput("moe_separated_forward_fused: scalar transition length != T");
  const std::size_t n = params.state_size;
  const std::size_t p = params.channels;
  const std::size_t experts = params.num_experts();
  const auto mask = active_mask(plan);
  std::vector<Matrix> outputs(experts, Matrix(x.steps(), p));

  detail::parallel_ranges(experts, threads, [&](std::size_t, std::size_t e0, std::size_t e1) {
    std::vector<double> b(n * p), c(n * p), xe(p), h(n * p), next(n * p);
    for (std::size_t e = e0; e < e1; ++e) {
      std::fill(h.begin(), h.end(), 0.0);
      for (std::size_t t = 0; t < x.steps(); ++t) {
        const bool on = mask[t * experts + e] != 0;
        project_token(params, e, x.token(t), 0, p, b, on ? std::span<double>(c) : std::span<double>(), xe);
        apply_transition(a, t, h, p, next);
        for (std::size_t k = 0; k < n; ++k)
          for (std::size_t ch = 0; ch < p; ++ch) next[k * p + ch] += b[k * p + ch] * xe[ch];
        h.swap(next);
        if (!all_finite(h)) throw NumericError("moe_separated_forward_fused: non-finite state", t + 1);
        if (on) readout(c, h, n, p, outputs[e].row(t));
      }
    }
  });
  return combine_outputs(outputs, plan);
}

}  // namespace moessm

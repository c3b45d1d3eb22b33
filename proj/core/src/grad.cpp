#include "moessm/grad.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "moessm/error.hpp"
#include "moessm/random.hpp"
#include "moessm/ssm.hpp"

namespace moessm {

std::vector<double> transition_parameters(const TransitionSpec& a) {
  if (const auto* d = a.get_if<DenseStatic>()) return {d->a.flat().begin(), d->a.flat().end()};
  if (const auto* g = a.get_if<DiagonalStatic>()) return g->a;
  return a.get_if<ScalarPerStep>()->a;
}

TransitionSpec with_transition_parameters(const TransitionSpec& a, std::span<const double> values) {
  const auto current = transition_parameters(a);
  if (values.size() != current.size()) throw InvalidInput("with_transition_parameters: size mismatch");
  switch (a.kind()) {
    case TransitionKind::kDense: {
      Matrix m(a.state_size(), a.state_size());
      std::copy(values.begin(), values.end(), m.flat().begin());
      return TransitionSpec::dense(std::move(m));
    }
    case TransitionKind::kDiagonal:
      return TransitionSpec::diagonal({values.begin(), values.end()});
    case TransitionKind::kScalar:
      break;
  }
  return TransitionSpec::scalar_per_step({values.begin(), values.end()}, a.state_size());
}

ScanGrad backward_ssm(const StateTrajectory& traj, const TransitionSpec& a, const Tensor3& c_tilde,
                      const Matrix& dy) {
  const std::size_t steps = c_tilde.steps();
  const std::size_t n = c_tilde.rows();
  const std::size_t p = c_tilde.cols();
  if (traj.h.steps() != steps + 1 || traj.h.rows() != n || traj.h.cols() != p)
    throw PreconditionError("backward_ssm: a recorded trajectory matching the streams is required");
  if (dy.rows() != steps || dy.cols() != p) throw InvalidInput("backward_ssm: dY must be T x P");
  if (!all_finite(dy.flat())) throw InvalidInput("backward_ssm: non-finite cotangent");
  if (n != a.state_size()) throw InvalidInput("backward_ssm: state size does not match transition");

  ScanGrad g;
  g.d_u = Tensor3(steps, n, p);
  g.d_c = Tensor3(steps, n, p);
  g.d_a.kind = a.kind();
  g.d_a.values.assign(transition_parameters(a).size(), 0.0);
  g.d_h0 = Matrix(n, p);

  std::vector<double> lambda(n * p, 0.0), carry(n * p, 0.0);
  for (std::size_t s = steps; s-- > 0;) {
    // lambda_s = C_s dy_s + A_{s+1}^T lambda_{s+1}; carry holds the second term.
    const auto cs = c_tilde.slice(s);
    const auto dys = dy.row(s);
    const auto hs = traj.at(s + 1);
    auto du = g.d_u.slice(s);
    auto dc = g.d_c.slice(s);
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t ch = 0; ch < p; ++ch) {
        const std::size_t i = k * p + ch;
        lambda[i] = cs[i] * dys[ch] + carry[i];
        du[i] = lambda[i];
        dc[i] = hs[i] * dys[ch];
      }
    const auto hprev = traj.at(s);
    switch (a.kind()) {
      case TransitionKind::kDense:
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t m = 0; m < n; ++m) {
            double acc = 0.0;
            for (std::size_t ch = 0; ch < p; ++ch) acc += lambda[r * p + ch] * hprev[m * p + ch];
            g.d_a.values[r * n + m] += acc;
          }
        break;
      case TransitionKind::kDiagonal:
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t ch = 0; ch < p; ++ch) g.d_a.values[r] += lambda[r * p + ch] * hprev[r * p + ch];
        break;
      case TransitionKind::kScalar:
        g.d_a.values[s] += dot(lambda, hprev);
        break;
    }
    apply_transition_t(a, s, lambda, p, carry);
  }
  std::copy(carry.begin(), carry.end(), g.d_h0.flat().begin());
  return g;
}

MixingGrad backward_mixing(const std::vector<StreamSet>& streams, const RoutingPlan& plan,
                           const Tensor3& d_u, const Tensor3& d_c) {
  if (streams.empty()) throw InvalidInput("backward_mixing: need at least one expert");
  const auto& first = streams.front();
  if (plan.experts() != streams.size() || plan.steps() != first.steps() || plan.active.size() != first.steps())
    throw InvalidInput("backward_mixing: plan does not match streams");
  if (!d_u.same_shape(first.b) || !d_c.same_shape(first.b))
    throw InvalidInput("backward_mixing: cotangent shape mismatch");
  const std::size_t n = first.state_size();
  const std::size_t p = first.channels();

  MixingGrad g;
  g.d_pi = Matrix(plan.steps(), plan.experts());
  g.d_streams.assign(streams.size(), StreamSet(first.steps(), n, p));
  for (std::size_t t = 0; t < first.steps(); ++t) {
    const auto du = d_u.slice(t);
    const auto dc = d_c.slice(t);
    for (std::size_t e : plan.active[t]) {
      const auto& s = streams[e];
      auto& ds = g.d_streams[e];
      const double w = plan.pi(t, e);
      const auto bt = s.b.slice(t);
      const auto ct = s.c.slice(t);
      const auto xt = s.x_inj.row(t);
      auto dbt = ds.b.slice(t);
      auto dct = ds.c.slice(t);
      auto dxt = ds.x_inj.row(t);
      double dpi = 0.0;
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t ch = 0; ch < p; ++ch) {
          const std::size_t i = k * p + ch;
          dpi += bt[i] * xt[ch] * du[i] + ct[i] * dc[i];
          dbt[i] = w * xt[ch] * du[i];
          dxt[ch] += w * bt[i] * du[i];
          dct[i] = w * dc[i];
        }
      g.d_pi(t, e) = dpi;
    }
  }
  return g;
}

LayerInstance make_layer_instance(const RngInstanceSpec& spec, RoutingMode mode, ProjectionLayout layout) {
  auto gen = generate_instance(spec);
  const auto& d = spec.dims;
  auto experts = generate_expert_params(spec.seed, d.state, d.channels, d.experts, layout);
  const CounterRng rng(spec.seed, 11);
  const std::size_t rows = experts.experts.front().wb.rows();
  for (std::size_t e = 0; e < d.experts; ++e) {
    const CounterRng r = rng.split(e);
    auto& ex = experts.experts[e];
    ex.bb.resize(rows);
    ex.bc.resize(rows);
    ex.bx.resize(d.channels);
    for (std::size_t i = 0; i < rows; ++i) {
      ex.bb[i] = 0.1 * r.normal(i);
      ex.bc[i] = 0.1 * r.normal(rows + i);
    }
    for (std::size_t i = 0; i < d.channels; ++i) ex.bx[i] = 0.1 * r.normal(2 * rows + i);
  }
  RouterParams router{gen.router_weights, std::vector<double>(d.experts)};
  const CounterRng rb = rng.split(1000);
  for (std::size_t e = 0; e < d.experts; ++e) router.bias[e] = 0.1 * rb.normal(e);
  Matrix h0 = random_matrix(rng.split(2000), d.state, d.channels, 0.5);
  return LayerInstance{std::move(experts), std::move(router), std::move(gen.transition), std::move(gen.x),
                       std::move(h0), mode == RoutingMode::kTopK ? d.active : 0};
}

LayerForward layer_forward(const LayerInstance& inst) {
  LayerForward f;
  f.logits = router_logits(inst.router, inst.x);
  f.softmax = softmax_route(f.logits);
  f.plan = inst.k == 0 ? f.softmax : topk_mask(f.softmax, inst.k);
  f.streams = expert_streams(inst.experts, inst.x);
  f.moe = moe_param_forward(f.streams, inst.transition, f.plan, inst.h0);
  return f;
}

double loss_value(LossKind kind, const Matrix& y) {
  if (kind == LossKind::kConstant) return 1.0;
  return 0.5 * dot(y.flat(), y.flat());
}

Matrix loss_gradient(LossKind kind, const Matrix& y) {
  if (kind == LossKind::kConstant) return Matrix(y.rows(), y.cols());
  return y;
}

GradBundle layer_backward(const LayerInstance& inst, const LayerForward& fwd, const Matrix& dy) {
  GradBundle g;
  g.scan = backward_ssm(fwd.moe.trajectory, inst.transition, fwd.moe.mixed.c_tilde, dy);
  g.mixing = backward_mixing(fwd.streams, fwd.plan, g.scan.d_u, g.scan.d_c);

  const auto& params = inst.experts;
  const std::size_t n = params.state_size;
  const std::size_t p = params.channels;
  const std::size_t steps = inst.x.steps();
  const bool full = params.layout() == ProjectionLayout::kFull;
  g.d_x = Matrix(steps, p);

  for (std::size_t e = 0; e < params.num_experts(); ++e) {
    const auto& ex = params.experts[e];
    const auto& ds = g.mixing.d_streams[e];
    ProjectionGrad pg{Matrix(ex.wb.rows(), p), Matrix(ex.wc.rows(), p), Matrix(p, p),
                      std::vector<double>(ex.wb.rows()), std::vector<double>(ex.wc.rows()),
                      std::vector<double>(p)};
    for (std::size_t t = 0; t < steps; ++t) {
      const auto xt = inst.x.token(t);
      auto dxt = g.d_x.row(t);
      auto accumulate_row = [&](Matrix& dw, std::vector<double>& db, const Matrix& w, std::size_t row, double gr) {
        if (gr == 0.0) return;
        auto dwr = dw.row(row);
        const auto wr = w.row(row);
        for (std::size_t j = 0; j < p; ++j) {
          dwr[j] += gr * xt[j];
          dxt[j] += wr[j] * gr;
        }
        db[row] += gr;
      };
      for (std::size_t k = 0; k < n; ++k) {
        if (full) {
          for (std::size_t ch = 0; ch < p; ++ch) {
            accumulate_row(pg.d_wb, pg.d_bb, ex.wb, k * p + ch, ds.b(t, k, ch));
            accumulate_row(pg.d_wc, pg.d_bc, ex.wc, k * p + ch, ds.c(t, k, ch));
          }
        } else {
          double gb = 0.0, gc = 0.0;
          for (std::size_t ch = 0; ch < p; ++ch) {
            gb += ds.b(t, k, ch);
            gc += ds.c(t, k, ch);
          }
          accumulate_row(pg.d_wb, pg.d_bb, ex.wb, k, gb);
          accumulate_row(pg.d_wc, pg.d_bc, ex.wc, k, gc);
        }
      }
      for (std::size_t ch = 0; ch < p; ++ch) accumulate_row(pg.d_wx, pg.d_bx, ex.wx, ch, ds.x_inj(t, ch));
    }
    g.d_experts.push_back(std::move(pg));
  }

  // Softmax adjoint restricted to the retained entries.
  const std::size_t experts = params.num_experts();
  g.d_logits = Matrix(steps, experts);
  g.d_router_w = Matrix(experts, p);
  g.d_router_b.assign(experts, 0.0);
  for (std::size_t t = 0; t < steps; ++t) {
    double inner = 0.0;
    for (std::size_t e : fwd.plan.active[t]) inner += fwd.softmax.pi(t, e) * g.mixing.d_pi(t, e);
    const auto xt = inst.x.token(t);
    auto dxt = g.d_x.row(t);
    for (std::size_t j = 0; j < experts; ++j) {
      const double dg = fwd.softmax.pi(t, j) * (g.mixing.d_pi(t, j) - inner);
      g.d_logits(t, j) = dg;
      g.d_router_b[j] += dg;
      auto dw = g.d_router_w.row(j);
      const auto w = inst.router.weights.row(j);
      for (std::size_t c = 0; c < p; ++c) {
        dw[c] += dg * xt[c];
        dxt[c] += w[c] * dg;
      }
    }
  }
  return g;
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

namespace {

struct ParamGroup {
  std::string name;
  std::size_t size;
  std::function<double(const LayerInstance&, std::size_t)> get;
  std::function<void(LayerInstance&, std::size_t, double)> set;
  std::function<double(const GradBundle&, std::size_t)> grad;
};

// Concatenates one per-expert matrix or vector across experts.
template <typename Member, typename GradMember>
ParamGroup expert_group(std::string name, const LayerInstance& inst, Member member, GradMember grad_member) {
  const std::size_t per = std::size(member(inst.experts.experts.front()));
  return ParamGroup{
      std::move(name), per * inst.experts.num_experts(),
      [=](const LayerInstance& li, std::size_t i) { return std::data(member(li.experts.experts[i / per]))[i % per]; },
      [=](LayerInstance& li, std::size_t i, double v) {
        std::data(member(li.experts.experts[i / per]))[i % per] = v;
      },
      [=](const GradBundle& g, std::size_t i) { return std::data(grad_member(g.d_experts[i / per]))[i % per]; }};
}

// A weight group followed by its bias.
ParamGroup joined(std::string name, ParamGroup w, ParamGroup b) {
  const std::size_t split = w.size;
  return ParamGroup{std::move(name), w.size + b.size,
                    [=](const LayerInstance& li, std::size_t i) { return i < split ? w.get(li, i) : b.get(li, i - split); },
                    [=](LayerInstance& li, std::size_t i, double v) {
                      if (i < split) w.set(li, i, v);
                      else b.set(li, i - split, v);
                    },
                    [=](const GradBundle& g, std::size_t i) { return i < split ? w.grad(g, i) : b.grad(g, i - split); }};
}

std::vector<ParamGroup> parameter_groups(const LayerInstance& inst) {
  std::vector<ParamGroup> groups;
  groups.push_back({"A", transition_parameters(inst.transition).size(),
                    [](const LayerInstance& li, std::size_t i) { return transition_parameters(li.transition)[i]; },
                    [](LayerInstance& li, std::size_t i, double v) {
                      auto vals = transition_parameters(li.transition);
                      vals[i] = v;
                      li.transition = with_transition_parameters(li.transition, vals);
                    },
                    [](const GradBundle& g, std::size_t i) { return g.scan.d_a.values[i]; }});
  groups.push_back({"h0", inst.h0.size(),
                    [](const LayerInstance& li, std::size_t i) { return li.h0.flat()[i]; },
                    [](LayerInstance& li, std::size_t i, double v) { li.h0.flat()[i] = v; },
                    [](const GradBundle& g, std::size_t i) { return g.scan.d_h0.flat()[i]; }});

  auto mat = [](auto field) {
    return [field](auto& obj) -> decltype(auto) { return (obj.*field).flat(); };
  };
  auto vec = [](auto field) {
    return [field](auto& obj) -> auto& { return obj.*field; };
  };
  groups.push_back(joined("B_proj", expert_group("Wb", inst, mat(&ExpertProjection::wb), mat(&ProjectionGrad::d_wb)),
                          expert_group("bB", inst, vec(&ExpertProjection::bb), vec(&ProjectionGrad::d_bb))));
  groups.push_back(joined("C_proj", expert_group("Wc", inst, mat(&ExpertProjection::wc), mat(&ProjectionGrad::d_wc)),
                          expert_group("bC", inst, vec(&ExpertProjection::bc), vec(&ProjectionGrad::d_bc))));
  groups.push_back(joined("X_proj", expert_group("Wx", inst, mat(&ExpertProjection::wx), mat(&ProjectionGrad::d_wx)),
                          expert_group("bX", inst, vec(&ExpertProjection::bx), vec(&ProjectionGrad::d_bx))));
  groups.push_back(joined(
      "router",
      {"W", inst.router.weights.size(),
       [](const LayerInstance& li, std::size_t i) { return li.router.weights.flat()[i]; },
       [](LayerInstance& li, std::size_t i, double v) { li.router.weights.flat()[i] = v; },
       [](const GradBundle& g, std::size_t i) { return g.d_router_w.flat()[i]; }},
      {"b", inst.router.bias.size(),
       [](const LayerInstance& li, std::size_t i) { return li.router.bias[i]; },
       [](LayerInstance& li, std::size_t i, double v) { li.router.bias[i] = v; },
       [](const GradBundle& g, std::size_t i) { return g.d_router_b[i]; }}));
  groups.push_back({"X", inst.x.x().size(),
                    [](const LayerInstance& li, std::size_t i) { return li.x.x().flat()[i]; },
                    [](LayerInstance& li, std::size_t i, double v) {
                      Matrix m = li.x.x();
                      m.flat()[i] = v;
                      li.x = SequenceBatch(std::move(m));
                    },
                    [](const GradBundle& g, std::size_t i) { return g.d_x.flat()[i]; }});
  return groups;
}

}  // namespace

std::vector<FdGroupReport> finite_diff_check(const LayerInstance& inst, const FdOptions& opts) {
  if (!(opts.step > 0.0)) throw InvalidInput("finite_diff_check: step must be positive");
  const auto base = layer_forward(inst);
  const auto grads = layer_backward(inst, base, loss_gradient(opts.loss, base.moe.y));
  const CounterRng rng(opts.seed, 31);

  std::vector<FdGroupReport> reports;
  const auto groups = parameter_groups(inst);
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& group = groups[gi];
    FdGroupReport rep{group.name, 0, 0, 0.0};
    std::vector<std::size_t> order(group.size);
    std::iota(order.begin(), order.end(), 0);
    if (group.size > opts.samples_per_group) {
      const CounterRng gr = rng.split(gi);
      std::vector<std::uint64_t> keys(group.size);
      for (std::size_t i = 0; i < group.size; ++i) keys[i] = gr.bits(i);
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });
    }
    LayerInstance probe = inst;
    for (std::size_t idx : order) {
      if (rep.coords >= opts.samples_per_group) break;
      const double orig = group.get(inst, idx);
      group.set(probe, idx, orig + opts.step);
      const auto fp = layer_forward(probe);
      group.set(probe, idx, orig - opts.step);
      const auto fm = layer_forward(probe);
      group.set(probe, idx, orig);
      if (fp.plan.active != base.plan.active || fm.plan.active != base.plan.active) {
        ++rep.rejected;
        continue;
      }
      const double numeric = (loss_value(opts.loss, fp.moe.y) - loss_value(opts.loss, fm.moe.y)) / (2.0 * opts.step);
      rep.max_rel_error = std::max(rep.max_rel_error, relative_error(group.grad(grads, idx), numeric));
      ++rep.coords;
    }
    reports.push_back(std::move(rep));
  }
  return reports;
}

namespace {

void fill_random(const CounterRng& rng, std::span<double> v) {
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = rng.normal(i);
}

AdjointReport make_adjoint(std::string name, double fwd, double bwd) {
  const double denom = std::max({std::abs(fwd), std::abs(bwd), 1e-300});
  return {std::move(name), fwd, bwd, std::abs(fwd - bwd) / denom};
}

double mixed_pairing(const MixedStreams& plus, const MixedStreams& minus, const Tensor3& wu,
                     const Tensor3& wc, double eps) {
  double s = 0.0;
  for (std::size_t i = 0; i < wu.flat().size(); ++i) {
    s += (plus.u_tilde.flat()[i] - minus.u_tilde.flat()[i]) * wu.flat()[i];
    s += (plus.c_tilde.flat()[i] - minus.c_tilde.flat()[i]) * wc.flat()[i];
  }
  return s / (2.0 * eps);
}

}  // namespace

std::vector<AdjointReport> adjoint_dot_tests(const MoeInstance& inst, std::uint64_t seed) {
  constexpr double kEps = 1e-2;
  const CounterRng rng(seed, 41);
  const auto base = moe_param_forward(inst.experts, inst.transition, inst.plan, inst.h0);
  const auto& mixed = base.mixed;
  const std::size_t steps = mixed.u_tilde.steps();
  const std::size_t n = mixed.u_tilde.rows();
  const std::size_t p = mixed.u_tilde.cols();
  std::vector<AdjointReport> out;

  {  // scan: (U~, C~, h0) -> Y is bilinear.
    Tensor3 vu(steps, n, p), vc(steps, n, p);
    Matrix vh(n, p), w(steps, p);
    fill_random(rng.split(0), vu.flat());
    fill_random(rng.split(1), vc.flat());
    fill_random(rng.split(2), vh.flat());
    fill_random(rng.split(3), w.flat());
    auto shifted = [&](double sign) {
      Tensor3 u = mixed.u_tilde, c = mixed.c_tilde;
      Matrix h = inst.h0.size() == 0 ? Matrix(n, p) : inst.h0;
      for (std::size_t i = 0; i < u.flat().size(); ++i) {
        u.flat()[i] += sign * kEps * vu.flat()[i];
        c.flat()[i] += sign * kEps * vc.flat()[i];
      }
      for (std::size_t i = 0; i < h.size(); ++i) h.flat()[i] += sign * kEps * vh.flat()[i];
      return ssm_scan_sequential(inst.transition, u, c, h, {false}).y;
    };
    const Matrix yp = shifted(1.0), ym = shifted(-1.0);
    double fwd = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) fwd += (yp.flat()[i] - ym.flat()[i]) / (2.0 * kEps) * w.flat()[i];
    const auto g = backward_ssm(base.trajectory, inst.transition, mixed.c_tilde, w);
    const double bwd = dot(vu.flat(), g.d_u.flat()) + dot(vc.flat(), g.d_c.flat()) + dot(vh.flat(), g.d_h0.flat());
    out.push_back(make_adjoint("scan", fwd, bwd));
  }

  Tensor3 wu(steps, n, p), wc(steps, n, p);
  fill_random(rng.split(10), wu.flat());
  fill_random(rng.split(11), wc.flat());
  const auto mg = backward_mixing(inst.experts, inst.plan, wu, wc);

  {  // pi -> (U~, C~) is linear.
    Matrix v(inst.plan.steps(), inst.plan.experts());
    const CounterRng r = rng.split(20);
    for (std::size_t t = 0; t < v.rows(); ++t)
      for (std::size_t e : inst.plan.active[t]) v(t, e) = r.normal(t * v.cols() + e);
    auto shifted = [&](double sign) {
      RoutingPlan plan = inst.plan;
      for (std::size_t i = 0; i < v.size(); ++i) plan.pi.flat()[i] += sign * kEps * v.flat()[i];
      return mix_streams(inst.experts, plan);
    };
    const double fwd = mixed_pairing(shifted(1.0), shifted(-1.0), wu, wc, kEps);
    out.push_back(make_adjoint("mix_pi", fwd, dot(v.flat(), mg.d_pi.flat())));
  }

  {  // (B, C) -> (U~, C~) is linear for fixed pi and x.
    std::vector<StreamSet> v = inst.experts;
    for (std::size_t e = 0; e < v.size(); ++e) {
      fill_random(rng.split(30 + 2 * e), v[e].b.flat());
      fill_random(rng.split(31 + 2 * e), v[e].c.flat());
    }
    auto shifted = [&](double sign) {
      std::vector<StreamSet> s = inst.experts;
      for (std::size_t e = 0; e < s.size(); ++e)
        for (std::size_t i = 0; i < s[e].b.flat().size(); ++i) {
          s[e].b.flat()[i] += sign * kEps * v[e].b.flat()[i];
          s[e].c.flat()[i] += sign * kEps * v[e].c.flat()[i];
        }
      return mix_streams(s, inst.plan);
    };
    double bwd = 0.0;
    for (std::size_t e = 0; e < v.size(); ++e)
      bwd += dot(v[e].b.flat(), mg.d_streams[e].b.flat()) + dot(v[e].c.flat(), mg.d_streams[e].c.flat());
    out.push_back(make_adjoint("mix_streams", mixed_pairing(shifted(1.0), shifted(-1.0), wu, wc, kEps), bwd));
  }

  {  // x_inj -> U~ is linear.
    std::vector<Matrix> v;
    for (std::size_t e = 0; e < inst.experts.size(); ++e) {
      Matrix m(steps, p);
      fill_random(rng.split(100 + e), m.flat());
      v.push_back(std::move(m));
    }
    auto shifted = [&](double sign) {
      std::vector<StreamSet> s = inst.experts;
      for (std::size_t e = 0; e < s.size(); ++e)
        for (std::size_t i = 0; i < v[e].size(); ++i) s[e].x_inj.flat()[i] += sign * kEps * v[e].flat()[i];
      return mix_streams(s, inst.plan);
    };
    double bwd = 0.0;
    for (std::size_t e = 0; e < v.size(); ++e) bwd += dot(v[e].flat(), mg.d_streams[e].x_inj.flat());
    out.push_back(make_adjoint("mix_x_inj", mixed_pairing(shifted(1.0), shifted(-1.0), wu, wc, kEps), bwd));
  }
  return out;
}

double equality_pi_gradient_gap(const MoeInstance& inst) {
  const auto mixed = moe_param_forward(inst.experts, inst.transition, inst.plan, inst.h0);
  const Matrix& dy = mixed.y;  // L = 0.5 ||Y||^2
  const auto sg = backward_ssm(mixed.trajectory, inst.transition, mixed.mixed.c_tilde, dy);
  const auto mg = backward_mixing(inst.experts, inst.plan, sg.d_u, sg.d_c);

  const auto sep = moe_separated_forward(inst.experts, inst.transition, inst.plan);
  const std::size_t experts = inst.experts.size();
  const std::size_t n = inst.transition.state_size();
  const std::size_t p = dy.cols();
  std::vector<double> g_mix(experts, 0.0), g_sep(experts, 0.0), ye(p);
  for (std::size_t t = 0; t < dy.rows(); ++t)
    for (std::size_t e : inst.plan.active[t]) {
      g_mix[e] += mg.d_pi(t, e);
      // The separated states do not depend on pi: dY_t/dpi_e = C^(e)T_t h^(e)_t.
      readout(inst.experts[e].c.slice(t), sep.trajectories[e].at(t + 1), n, p, ye);
      g_sep[e] += dot(ye, sep.y.row(t));
    }
  // Raw pi-gradients differ by a constant (the mixed readout scales with
  // sum_e pi_e); the softmax adjoint removes it.
  auto to_logits = [&](const std::vector<double>& g) {
    double inner = 0.0;
    for (std::size_t e = 0; e < experts; ++e) inner += inst.plan.pi(0, e) * g[e];
    std::vector<double> out(experts);
    for (std::size_t e = 0; e < experts; ++e) out[e] = inst.plan.pi(0, e) * (g[e] - inner);
    return out;
  };
  const auto l_mix = to_logits(g_mix);
  const auto l_sep = to_logits(g_sep);
  const double scale = std::max({1.0, max_abs(l_mix), max_abs(l_sep)});
  return max_abs_diff(l_mix, l_sep) / scale;
}

}  // namespace moessm

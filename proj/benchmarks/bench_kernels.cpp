#include <benchmark/benchmark.h>

#include "moessm/instance.hpp"
#include "moessm/moe.hpp"
#include "moessm/router.hpp"
#include "moessm/ssd.hpp"
#include "moessm/ssm.hpp"

using namespace moessm;

namespace {

struct LayerCase {
  GeneratedInstance gen;
  ExpertParams params;
  RoutingPlan plan;
};

LayerCase make_case(std::size_t steps, std::size_t n, std::size_t p, std::size_t e, std::size_t k,
                    TransitionKind kind = TransitionKind::kDense) {
  RngInstanceSpec s;
  s.seed = 1;
  s.dims = {steps, n, p, e, k};
  s.rho_target = 0.9;
  s.transition = kind;
  auto gen = generate_instance(s, false);
  auto params = generate_expert_params(1, n, p, e, ProjectionLayout::kSharedAcrossChannels);
  auto plan = topk_mask(softmax_route(router_logits({gen.router_weights, {}}, gen.x)), k);
  return {std::move(gen), std::move(params), std::move(plan)};
}

// Args: T, N, P, E, k.
void BM_MixedFused(benchmark::State& state) {
  const auto c = make_case(state.range(0), state.range(1), state.range(2), state.range(3), state.range(4));
  for (auto _ : state) benchmark::DoNotOptimize(moe_param_forward_fused(c.params, c.gen.transition, c.plan, c.gen.x));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_SeparatedFused(benchmark::State& state) {
  const auto c = make_case(state.range(0), state.range(1), state.range(2), state.range(3), state.range(4));
  for (auto _ : state)
    benchmark::DoNotOptimize(moe_separated_forward_fused(c.params, c.gen.transition, c.plan, c.gen.x));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_Routing(benchmark::State& state) {
  const auto c = make_case(state.range(0), 1, state.range(1), state.range(2), 1);
  const RouterParams r{c.gen.router_weights, {}};
  for (auto _ : state) benchmark::DoNotOptimize(topk_mask(softmax_route(router_logits(r, c.gen.x)), 1));
}

// Args: T, N, P, Q (Q = 0 runs the sequential scan).
void BM_ScalarScan(benchmark::State& state) {
  const std::size_t steps = state.range(0), n = state.range(1), p = state.range(2), q = state.range(3);
  RngInstanceSpec s;
  s.seed = 2;
  s.dims = {steps, n, p, 1, 1};
  s.rho_target = 0.95;
  s.transition = TransitionKind::kScalar;
  const auto g = generate_instance(s);
  const auto u = g.experts[0].injection();
  const auto plan = ChunkPlan::make(steps, q == 0 ? steps : q);
  for (auto _ : state) {
    if (q == 0)
      benchmark::DoNotOptimize(ssm_scan_sequential(g.transition, u, g.experts[0].c, {}, {false}));
    else
      benchmark::DoNotOptimize(ssd_chunked_injected(g.transition, u, g.experts[0].c, plan));
  }
  state.SetItemsProcessed(state.iterations() * steps);
}

}  // namespace

BENCHMARK(BM_MixedFused)->ArgsProduct({{512}, {32}, {64}, {2, 4, 8, 16}, {1}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SeparatedFused)->ArgsProduct({{512}, {32}, {64}, {2, 4, 8, 16}, {1}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Routing)->ArgsProduct({{4096}, {256}, {2, 8, 64}})->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_ScalarScan)->ArgsProduct({{1024}, {16}, {64}, {0, 8, 32, 128}})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();

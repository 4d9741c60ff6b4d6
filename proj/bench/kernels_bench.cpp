#include <benchmark/benchmark.h>

#include <vector>

#include "hubsim/attention.hpp"
#include "hubsim/kernels.hpp"
#include "hubsim/rng.hpp"

using namespace hubsim;

namespace {

std::vector<float> noise(std::size_t n, std::uint64_t seed) {
  RngStream r(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(r.normal());
  return v;
}

void BM_gemm(benchmark::State& state, Exec exec) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = noise(n * n, 1), b = noise(n * n, 2);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    kernels::gemm<float>(a, b, c, n, n, n, false, exec);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}

// One head over a P-agent sequence, T=6, n=3, 2x2 grid, K=2 with hubs.
void BM_attention(benchmark::State& state, Exec exec, AttentionMode mode) {
  TopologySpec s;
  s.P = static_cast<std::size_t>(state.range(0));
  s.T = 6;
  s.H = 2;
  s.W = 2;
  s.K = mode == AttentionMode::causal_hub ? 2 : 0;
  s.n = 3;
  const AttentionPlan plan = plan_for_sequence(s, mode);
  const std::size_t S = s.sequence_length(), d = 32;
  const auto q = noise(S * d, 3), k = noise(S * d, 4), v = noise(S * d, 5);
  std::vector<float> out(S * d);
  AttentionIO<float> io;
  io.q = q.data();
  io.k = k.data();
  io.v = v.data();
  io.out = out.data();
  io.q_stride = io.kv_stride = io.out_stride = d;
  io.dim = d;
  AttentionCounters counters;
  for (auto _ : state) {
    attention_forward(io, plan, exec, &counters);
    benchmark::DoNotOptimize(out.data());
  }
  state.counters["pairs"] = static_cast<double>(counters.pairs) / static_cast<double>(state.iterations());
}

}  // namespace

BENCHMARK_CAPTURE(BM_gemm, serial, Exec::serial)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK_CAPTURE(BM_gemm, parallel, Exec::parallel)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK_CAPTURE(BM_attention, hub_serial, Exec::serial, AttentionMode::causal_hub)->Arg(2)->Arg(4)->Arg(8);
BENCHMARK_CAPTURE(BM_attention, hub_parallel, Exec::parallel, AttentionMode::causal_hub)->Arg(2)->Arg(4)->Arg(8);
BENCHMARK_CAPTURE(BM_attention, dense_serial, Exec::serial, AttentionMode::causal_dense)->Arg(2)->Arg(4)->Arg(8);
BENCHMARK_CAPTURE(BM_attention, dense_parallel, Exec::parallel, AttentionMode::causal_dense)->Arg(2)->Arg(4)->Arg(8);

BENCHMARK_MAIN();

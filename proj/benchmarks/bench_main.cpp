#include <benchmark/benchmark.h>

#include "abft/checksum.hpp"
#include "abft/dense.hpp"
#include "abft/perf_model.hpp"
#include "abft/random.hpp"
#include "abft/summa.hpp"

using namespace abft;

static void BM_GemmUpdate(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const DenseMatrix a = random_matrix(n, n, rng), b = random_matrix(n, n, rng);
  DenseMatrix c(n, n);
  for (auto _ : state) {
    gemm_update(c, a, b);
    benchmark::DoNotOptimize(c.values().data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_GemmUpdate)->Arg(32)->Arg(64)->Arg(128);

static void BM_EncodeMatrix(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  const DenseMatrix a = random_matrix(n, n, rng);
  const ChecksumScheme s = make_scheme(1, 4);
  for (auto _ : state) benchmark::DoNotOptimize(encode_matrix(a, s, s, Blocking{n / 8, 4, 4}));
}
BENCHMARK(BM_EncodeMatrix)->Arg(64)->Arg(256);

static void BM_FtPdgemm(benchmark::State& state) {
  const auto q = static_cast<std::size_t>(state.range(0));
  const bool faulty = state.range(1) != 0;
  const std::size_t n = 16 * (q - 1);
  Rng rng(3);
  const DenseMatrix a = random_matrix(n, n, rng), b = random_matrix(n, n, rng);
  for (auto _ : state) {
    FaultPlan plan;
    if (faulty) plan.injections.push_back({0, {Trigger::Kind::step, 2}});
    GridWorld world(q, plan, 1);
    const FtMatrix fa = distribute(a, world, 4, "A");
    const FtMatrix fb = distribute(b, world, 4, "B");
    benchmark::DoNotOptimize(ft_pdgemm(fa, fb, world));
  }
}
BENCHMARK(BM_FtPdgemm)->Args({3, 0})->Args({3, 1})->Args({5, 0})->Args({5, 1});

static void BM_WeakScalingTable(benchmark::State& state) {
  PerfParams p;
  p.t_restart = 0.01;
  p.t_reduce_per_word = 1e-8;
  for (auto _ : state) benchmark::DoNotOptimize(weak_scaling_table(p));
}
BENCHMARK(BM_WeakScalingTable);
BENCHMARK_MAIN();

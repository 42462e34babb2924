#include <benchmark/benchmark.h>

#include <random>

#include "covtrack/cost_volume.hpp"
#include "covtrack/embedding.hpp"
#include "covtrack/metrics.hpp"
#include "covtrack/warp.hpp"

using namespace covtrack;

namespace {

FeatureGrid random_grid(int h, int w, int c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  FeatureGrid g(h, w, c, 8);
  for (double& v : g.data) v = dist(rng);
  return g;
}

}  // namespace

static void BM_BuildCostVolume(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const FeatureGrid cur = random_grid(n, n, 32, 1);
  const FeatureGrid prev = random_grid(n, n, 32, 2);
  for (auto _ : state) {
    CostVolume c = build_cost_volume(cur, prev);
    benchmark::DoNotOptimize(c.values.data());
  }
  state.SetComplexityN(n * n);
}
BENCHMARK(BM_BuildCostVolume)->Arg(8)->Arg(16)->Arg(24)->Complexity();

static void BM_OffsetField(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const CostVolume c = build_cost_volume(random_grid(n, n, 32, 3), random_grid(n, n, 32, 4));
  for (auto _ : state) {
    OffsetField field = offset_field(c);
    benchmark::DoNotOptimize(field.data.data());
  }
}
BENCHMARK(BM_OffsetField)->Arg(8)->Arg(16)->Arg(24);

static void BM_EmbedForward(benchmark::State& state) {
  EmbeddingNet net(16, {64, 64}, 128, 5);
  const FeatureGrid f = random_grid(32, 44, 16, 6);
  for (auto _ : state) {
    FeatureGrid e = net.forward(f);
    benchmark::DoNotOptimize(e.data.data());
  }
}
BENCHMARK(BM_EmbedForward);

static void BM_CvaLossGrad(benchmark::State& state) {
  const CostVolume c =
      build_cost_volume(random_grid(16, 16, 32, 7), random_grid(16, 16, 32, 8));
  SupervisionMask mask(16, 16);
  mask.add(2, 3, 2, 4);
  mask.add(8, 9, 7, 9);
  mask.add(12, 1, 12, 2);
  for (auto _ : state) {
    CvaGradients g = cva_loss_grad(c, mask);
    benchmark::DoNotOptimize(g.cur.data.data());
  }
}
BENCHMARK(BM_CvaLossGrad);

static void BM_Warp(benchmark::State& state) {
  const FeatureGrid f = random_grid(48, 64, 17, 9);
  DcnOffsets offsets(48, 64, 3);
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> dist(-3.0, 3.0);
  for (double& v : offsets.data) v = dist(rng);
  const WarpKernel kernel = WarpKernel::center_tap();
  for (auto _ : state) {
    FeatureGrid out = warp(f, offsets, kernel);
    benchmark::DoNotOptimize(out.data.data());
  }
}
BENCHMARK(BM_Warp);

static void BM_Hungarian(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  Matrix cost(n, n);
  for (double& v : cost.data) v = dist(rng);
  for (auto _ : state) {
    Assignment a = hungarian(cost);
    benchmark::DoNotOptimize(a.row_to_col.data());
  }
  state.SetComplexityN(n);
}
BENCHMARK(BM_Hungarian)->Arg(8)->Arg(32)->Arg(128)->Complexity();

BENCHMARK_MAIN();

#include <benchmark/benchmark.h>

#include "sne/lif.hpp"
#include "sne/ops.hpp"
#include "sne/partition.hpp"
#include "sne/rng.hpp"

using namespace sne;

namespace {

Tensor filled(const Shape& shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t = Tensor::zeros(shape);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<real>(rng.normal());
  return t;
}

partition::FeatureMatrix features(std::size_t rows, std::size_t cols) {
  Rng rng(3);
  partition::FeatureMatrix f;
  f.rows = rows;
  f.cols = cols;
  f.values.resize(rows * cols);
  for (auto& v : f.values) v = rng.normal();
  return f;
}

void BM_Conv2d(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const Tensor x = filled({8, c, 16, 16}, 1), k = filled({c, c, 3, 3}, 2);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(ops::conv2d(x, k, {1, 1}));
  state.SetItemsProcessed(state.iterations() * 8 * c * c * 9 * 16 * 16);
}
BENCHMARK(BM_Conv2d)->Arg(16)->Arg(64);

void BM_LifMultistep(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0));
  const Tensor x = filled({t, 32, 64, 8, 8}, 4);
  snn::LIFParams p;
  NoGradGuard guard;
  for (auto _ : state) {
    snn::LIFState s;
    benchmark::DoNotOptimize(snn::lif_multistep(x, s, p));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(x.numel()));
}
BENCHMARK(BM_LifMultistep)->Arg(4)->Arg(16);

void BM_KMeans(benchmark::State& state) {
  const auto f = features(512, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(partition::kmeans_columns(f, 4, 1));
}
BENCHMARK(BM_KMeans)->Arg(64)->Arg(256);

void BM_Agglomerative(benchmark::State& state) {
  const auto f = features(512, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(partition::agglomerative(f, 4));
}
BENCHMARK(BM_Agglomerative)->Arg(64)->Arg(256);

}  // namespace
BENCHMARK_MAIN();

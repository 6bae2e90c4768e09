#include <benchmark/benchmark.h>

#include <random>

#include "ttnlab/adaptation.hpp"
#include "ttnlab/checkpoint.hpp"
#include "ttnlab/layers.hpp"
#include "ttnlab/model.hpp"
#include "ttnlab/network.hpp"
#include "ttnlab/scoring.hpp"

using namespace ttnlab;

namespace {

Tensor uniform_tensor(Shape shape, std::uint64_t seed) {
  Tensor t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = u(rng);
  return t;
}

// Default-sized network on 16x16 inputs, 8 classes.
ModelCheckpoint bench_model() {
  return init_model({3, 16, 16}, default_architecture(3, 8, {16, 16, 32, 32, 64, 64}, 2), 8, 11);
}

void BM_Conv2dForward(benchmark::State& state) {
  const std::size_t channels = static_cast<std::size_t>(state.range(0));
  const Tensor x = uniform_tensor({64, channels, 16, 16}, 1);
  const Tensor w = uniform_tensor({channels, channels, 3, 3}, 2);
  const Tensor b = uniform_tensor({channels}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::conv2d_forward(x, w, b, 1, 1));
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_Conv2dForward)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_NetworkForward(benchmark::State& state) {
  const ModelCheckpoint model = bench_model();
  const Tensor x = uniform_tensor({static_cast<std::size_t>(state.range(0)), 3, 16, 16}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(forward(model, x, BatchMode{}).logits);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_NetworkForward)->Arg(64)->Arg(200)->Unit(benchmark::kMillisecond);

void BM_HybridTtnPredict(benchmark::State& state) {
  const ModelCheckpoint model = bench_model();
  const std::size_t classes = model.class_count;
  // Random score table; only its shape matters for the cost.
  ScoreTable table(classes, model.bn_channel_counts(), checkpoint_digest(model));
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (float& v : table.values()) v = static_cast<float>(u(rng));
  const Tensor x = uniform_tensor({200, 3, 16, 16}, 6);
  for (auto _ : state) benchmark::DoNotOptimize(hybrid_ttn_predict(model, x, table).predictions);
  state.SetItemsProcessed(state.iterations() * 200);
}
BENCHMARK(BM_HybridTtnPredict)->Unit(benchmark::kMillisecond);

}  // namespace

// The packaged benchmark_main archive is built with a different LTO version,
// so the entry point is defined here.
BENCHMARK_MAIN();

#include <benchmark/benchmark.h>

#include "meps/autograd.hpp"
#include "meps/distortion.hpp"
#include "meps/metrics.hpp"
#include "meps/model.hpp"

using namespace meps;

static void BM_Conv2dForward(benchmark::State& state) {
  const std::size_t c = std::size_t(state.range(0)), side = std::size_t(state.range(1));
  Rng rng(1);
  const auto x = randn<float>({1, c, side, side}, rng);
  const auto w = randn<float>({c, c, 3, 3}, rng);
  const Tensor<float> b({c});
  for (auto _ : state) benchmark::DoNotOptimize(conv2d_forward(x, w, b));
  state.SetItemsProcessed(std::int64_t(state.iterations() * c * c * 9 * side * side));
}
BENCHMARK(BM_Conv2dForward)->Args({16, 32})->Args({16, 128})->Args({64, 48})->Unit(benchmark::kMicrosecond);

static void BM_ModelInfer(benchmark::State& state) {
  MepsNet<float> m(MepsNetConfig::desk_default());
  init_parameters(m, 1);
  Rng rng(2);
  const std::size_t side = std::size_t(state.range(0));
  const auto x = rand_uniform<float>({1, 3, side, side}, rng, 0, 1);
  for (auto _ : state) benchmark::DoNotOptimize(m.infer(x));
}
BENCHMARK(BM_ModelInfer)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);

static void BM_PinkNoise(benchmark::State& state) {
  const std::size_t side = std::size_t(state.range(0));
  Rng rng(3);
  for (auto _ : state) benchmark::DoNotOptimize(pink_noise_field(side, side, rng));
}
BENCHMARK(BM_PinkNoise)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);

static void BM_Ssim(benchmark::State& state) {
  const std::size_t side = std::size_t(state.range(0));
  Image a(side, side), b(side, side);
  Rng rng(4);
  for (float& v : a.pixels()) v = float(rng.uniform());
  for (float& v : b.pixels()) v = float(rng.uniform());
  for (auto _ : state) benchmark::DoNotOptimize(ssim(a, b));
}
BENCHMARK(BM_Ssim)->Arg(256)->Arg(512)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();

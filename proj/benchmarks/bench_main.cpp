#include <benchmark/benchmark.h>

#include "firead/blocks.hpp"
#include "firead/loss.hpp"
#include "firead/model.hpp"
#include "firead/profiler.hpp"

namespace {

using namespace firead;

void BM_Conv3x3(benchmark::State& state) {
  const std::int64_t c = state.range(0), side = state.range(1);
  Rng rng(1);
  const auto spec = Conv2dSpec::dense(c, c, 3);
  auto x = Tensor<float>::uniform({1, c, side, side}, -1, 1, rng);
  auto w = Tensor<float>::kaiming(spec.weight_shape(), spec.fan_in(), rng);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, spec, w));
  state.counters["MACs/s"] = benchmark::Counter(static_cast<double>(spec.macs(x.shape())), benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Conv3x3)->Args({16, 80})->Args({64, 40})->Args({128, 20})->Unit(benchmark::kMillisecond);

void BM_Depthwise3x3(benchmark::State& state) {
  const std::int64_t c = state.range(0), side = state.range(1);
  Rng rng(2);
  const auto spec = Conv2dSpec::depthwise(c);
  auto x = Tensor<float>::uniform({1, c, side, side}, -1, 1, rng);
  auto w = Tensor<float>::kaiming(spec.weight_shape(), spec.fan_in(), rng);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, spec, w));
}
BENCHMARK(BM_Depthwise3x3)->Args({32, 80})->Args({128, 40})->Unit(benchmark::kMicrosecond);

void BM_AirBlock(benchmark::State& state) {
  const std::int64_t c = state.range(0), side = state.range(1);
  Rng rng(3);
  const auto p = AirBlockParams<float>::make(c, rng);
  auto x = Tensor<float>::uniform({1, c, side, side}, -1, 1, rng);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(air(x, p, Mode::infer));
}
BENCHMARK(BM_AirBlock)->Args({32, 80})->Args({128, 20})->Unit(benchmark::kMillisecond);

void BM_DpdfBlock(benchmark::State& state) {
  const std::int64_t c = state.range(0), side = state.range(1);
  Rng rng(4);
  const auto p = DpdfBlockParams<float>::make(c, 2 * c, rng);
  auto x = Tensor<float>::uniform({1, c, side, side}, -1, 1, rng);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(dpdf(x, p, Mode::infer));
}
BENCHMARK(BM_DpdfBlock)->Args({16, 160})->Args({64, 40})->Unit(benchmark::kMillisecond);

void BM_ForwardFull(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  Rng rng(5);
  ModelConfig cfg = ModelConfig::preset(Variant::full);
  cfg.input_size = size;
  const auto m = Model<float>::build(cfg, rng);
  auto x = Tensor<float>::uniform({1, 3, size, size}, 0, 1, rng);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(m.forward(x, Mode::infer));
}
BENCHMARK(BM_ForwardFull)->Arg(160)->Arg(320)->Unit(benchmark::kMillisecond);

void BM_ToyTrainStep(benchmark::State& state) {
  Rng rng(6);
  const auto cfg = ModelConfig::toy();
  auto m = Model<float>::build(cfg, rng);
  auto x = Tensor<float>::uniform({4, 3, 64, 64}, 0, 1, rng);
  std::vector<ImageTargets> targets(4, assign({{"a", 0, {0.5, 0.5, 0.2, 0.3}}}, cfg));
  for (auto _ : state) {
    m.zero_grad();
    const auto out = detection_loss<float>(m.forward(x, Mode::train), targets, cfg.input_size);
    backward(out.total);
  }
}
BENCHMARK(BM_ToyTrainStep)->Unit(benchmark::kMillisecond);

void BM_Nms(benchmark::State& state) {
  Rng rng(7);
  std::vector<Detection> dets;
  for (int i = 0; i < state.range(0); ++i)
    dets.push_back({"img", 0, rng.uniform(), {rng.uniform(), rng.uniform(), rng.uniform(0.02, 0.2), rng.uniform(0.02, 0.2)}});
  for (auto _ : state) benchmark::DoNotOptimize(nms(dets, 0.45));
}
BENCHMARK(BM_Nms)->Arg(200)->Arg(2000)->Unit(benchmark::kMicrosecond);

void BM_ProfileCount(benchmark::State& state) {
  Rng rng(8);
  const auto m = Model<float>::build(ModelConfig::preset(Variant::full), rng);
  for (auto _ : state) benchmark::DoNotOptimize(count_macs(m, 640));
}
BENCHMARK(BM_ProfileCount)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();

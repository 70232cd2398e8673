#include <benchmark/benchmark.h>

#include "dynlat/executor.hpp"
#include "dynlat/latency.hpp"
#include "dynlat/network.hpp"

using namespace dynlat;

namespace {

const HardwareSpec& v100() {
  static const HardwareSpec hw = load_hardware("V100");
  return hw;
}

void BM_SearchSchedule(benchmark::State& state) {
  const auto block = make_bottleneck({256, 56, 56}, 64, 256, 1);
  const auto ws =
      block_workloads(block, DynamicConfig::fixed(), ActivationProfile::uniform(1), FusionFlags::all(), 128);
  LatencyOptions opts;
  opts.threads = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(search_schedule(ws[1], v100(), opts));
}
BENCHMARK(BM_SearchSchedule)->Arg(1)->Arg(4);

void BM_PredictBlock(benchmark::State& state) {
  const auto block = make_bottleneck({256, 56, 56}, 64, 256, 1);
  const auto cfg = state.range(0) == 0 ? DynamicConfig::spatial(4) : DynamicConfig::channel(1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        predict_block(block, cfg, ActivationProfile::uniform(0.6), FusionFlags::all(), v100(), 128));
  }
}
BENCHMARK(BM_PredictBlock)->Arg(0)->Arg(1);

void BM_PredictNetwork(benchmark::State& state) {
  const auto net = build_network("resnet101");
  for (auto _ : state) {
    benchmark::DoNotOptimize(predict_network(net, Paradigm::kLayer, std::nullopt, {0.4}, v100(), 128));
  }
}
BENCHMARK(BM_PredictNetwork)->Unit(benchmark::kMillisecond);

void BM_VerifyCase(benchmark::State& state) {
  const auto cases = default_verify_cases(1, 2024);
  for (auto _ : state)
    for (const auto& c : cases) benchmark::DoNotOptimize(run_verify_case(c));
}
BENCHMARK(BM_VerifyCase);

}  // namespace

BENCHMARK_MAIN();

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "dynlat/error.hpp"
#include "dynlat/latency.hpp"

using namespace dynlat;

namespace {

const HardwareSpec& v100() {
  static const HardwareSpec hw = load_hardware("V100");
  return hw;
}

BlockSpec stage1_block() { return make_bottleneck({256, 56, 56}, 64, 256, 1); }

double total_us(const BlockSpec& b, const DynamicConfig& cfg, double r, const FusionFlags& f = FusionFlags::all(),
                const HardwareSpec& hw = v100(), std::int64_t batch = 128) {
  return predict_block(b, cfg, ActivationProfile::uniform(r), f, hw, batch).latency.total_s * 1e6;
}

const Workload* find(const std::vector<Workload>& ws, std::string_view name) {
  for (const auto& w : ws)
    if (w.name == name) return &w;
  return nullptr;
}

}  // namespace

TEST(TileShapes, CandidateSets) {
  const auto a = enumerate_tile_shapes({10, 64, 4, 4});
  EXPECT_EQ(a.size(), 4u * 7u * 3u * 3u);
  for (const auto& t : a) {
    EXPECT_LE(t.t_p, 8);
    EXPECT_LE(t.t_s1, 4);
    EXPECT_EQ(t.t_c & (t.t_c - 1), 0);
  }
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  const auto one = enumerate_tile_shapes({1, 1, 1, 1});
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one.front(), (TileShape{1, 1, 1, 1}));
  EXPECT_EQ(enumerate_tile_shapes({2, 2, 2, 2}).size(), 16u);
}

TEST(TileShapes, CountIsProductOfCeilings) {
  EXPECT_EQ(tile_count({10, 64, 5, 7}, {4, 16, 2, 4}), 3 * 4 * 3 * 2);
}

TEST(DataLatency, FourMebibytesOffChip) {
  HardwareSpec hw = v100();
  hw.onchip_bandwidth_factor = 1e300;
  Workload w;
  w.dims = {1, 1, 1, 1};
  w.in_bytes = 1 << 22;
  const double got = data_latency(w, {1, 1, 1, 1}, hw);
  const double want = 4194304.0 / 7e11;
  EXPECT_NEAR(got, want, want * 1e-9);
  EXPECT_NEAR(got * 1e6, 5.99, 0.01);
}

TEST(DataLatency, ZeroBytesIsZero) {
  Workload w;
  w.dims = {1, 1, 1, 1};
  w.operands = 0;
  EXPECT_EQ(data_latency(w, {1, 1, 1, 1}, v100()), 0.0);
}

TEST(DataLatency, HaloTrafficFavorsLargerPatches) {
  // Same output volume, 3x3 window: 1x1 patches re-read 9 inputs per output,
  // 4x4 patches read 36 per 16 outputs.
  Workload a;
  a.dims = {16, 8, 1, 1};
  a.window = {3, 3};
  a.reduce_channels = 8;
  a.out_per_group = 8;
  a.input_channels = 8;
  Workload b = a;
  b.dims = {1, 8, 4, 4};
  HardwareSpec hw = v100();
  const double la = data_latency(a, {1, 8, 1, 1}, hw);
  const double lb = data_latency(b, {1, 8, 4, 4}, hw);
  EXPECT_GT(la, lb);
  EXPECT_NEAR(la / lb, 9.0 / 2.25, 1e-12);
}

TEST(ComputeLatency, TwoWavesOnV100) {
  Workload w;
  w.dims = {160, 1, 1, 1};
  w.macs = static_cast<std::int64_t>(9.6e6) * 160;
  const auto plan = evaluate_tile(w, {1, 1, 1, 1}, v100());
  EXPECT_EQ(plan.tile_count, 160);
  EXPECT_EQ(plan.waves, 2);
  EXPECT_NEAR(plan.predicted.compute_s, 200e-6, 1e-15);
  LatencyOptions fma;
  fma.fma_doubling = true;
  EXPECT_NEAR(compute_latency(w, {1, 1, 1, 1}, v100(), fma), 100e-6, 1e-15);
}

TEST(ComputeLatency, ZeroMacsAndSingleWave) {
  Workload w;
  w.dims = {80, 1, 1, 1};
  EXPECT_EQ(compute_latency(w, {1, 1, 1, 1}, v100()), 0.0);
  w.macs = 800;
  EXPECT_EQ(evaluate_tile(w, {1, 1, 1, 1}, v100()).waves, 1);
}

TEST(Search, SingletonAndExhaustiveMinimum) {
  Workload one;
  one.dims = {1, 1, 1, 1};
  one.macs = 5;
  EXPECT_EQ(search_schedule(one, v100()).tile, (TileShape{1, 1, 1, 1}));

  const auto ws = block_workloads(stage1_block(), DynamicConfig::spatial(4), ActivationProfile::uniform(0.6),
                                  FusionFlags::all(), 128);
  for (const auto& w : ws) {
    if (w.empty()) continue;
    const auto best = search_schedule(w, v100());
    for (const auto& t : enumerate_tile_shapes(w.dims)) {
      const auto p = evaluate_tile(w, t, v100());
      ASSERT_GE(p.predicted.total_s, best.predicted.total_s);
      if (p.predicted.total_s == best.predicted.total_s) ASSERT_GE(t, best.tile);
    }
  }
}

TEST(Search, TiesGoToSmallestTile) {
  // Nothing to compute or move: every candidate costs zero.
  Workload w;
  w.dims = {4, 4, 4, 4};
  w.operands = 0;
  EXPECT_EQ(search_schedule(w, v100()).tile, (TileShape{1, 1, 1, 1}));
}

TEST(Search, IndependentOfThreadCount) {
  const auto ws = block_workloads(stage1_block(), DynamicConfig::channel(1), ActivationProfile::uniform(0.3),
                                  FusionFlags::all(), 128);
  for (const auto& w : ws) {
    if (w.empty()) continue;
    LatencyOptions one, many;
    many.threads = 7;
    const auto a = search_schedule(w, v100(), one);
    const auto b = search_schedule(w, v100(), many);
    EXPECT_EQ(a.tile, b.tile);
    EXPECT_EQ(a.predicted.total_s, b.predicted.total_s);
  }
}

TEST(Search, EmptyWorkloadRejected) {
  Workload w;
  EXPECT_THROW(search_schedule(w, v100()), Error);
}

TEST(Workloads, ZeroRateSpatialLeavesOnlyMasker) {
  const auto ws = block_workloads(stage1_block(), DynamicConfig::spatial(4), ActivationProfile::uniform(0.0),
                                  FusionFlags::all(), 1);
  for (const auto& w : ws) {
    if (w.kind == OperatorKind::kGatherConv || w.kind == OperatorKind::kScatterAdd || w.name == "conv3-patches") {
      EXPECT_EQ(w.dims[0], 0) << w.name;
    }
  }
  EXPECT_GT(find(ws, "masker-conv1")->macs, 0);
}

TEST(Workloads, GatherTileGeometryWithHalo) {
  // 8x8 output, S=2: 16 cells, 3 active.
  const auto b = make_bottleneck({8, 8, 8}, 4, 8, 1);
  const auto ws = block_workloads(b, DynamicConfig::spatial(2), ActivationProfile::uniform(3.0 / 16.0),
                                  FusionFlags::none(), 1);
  const auto* g = find(ws, "gather");
  ASSERT_NE(g, nullptr);
  EXPECT_EQ(g->dims, (std::array<std::int64_t, 4>{3, 4, 4, 4}));
  EXPECT_EQ(g->out_bytes, 3 * 4 * 4 * 4 * kBytesPerElement);
}

TEST(Workloads, BatchScalesPatchCount) {
  const auto b = stage1_block();
  const auto cfg = DynamicConfig::spatial(4);
  EXPECT_EQ(active_patches(b, cfg, 0.5, 128), 128 * active_patches(b, cfg, 0.5, 1));
  const auto pred = predict_block(b, cfg, ActivationProfile::uniform(0.5), FusionFlags::all(), v100(), 128);
  EXPECT_GT(pred.latency.total_s, 0);
}

TEST(Workloads, ByteCountsMatchShapes) {
  const auto b = stage1_block();
  const auto ws = block_workloads(b, DynamicConfig::fixed(), ActivationProfile::uniform(1), FusionFlags::all(), 2);
  const auto* c1 = find(ws, "conv1");
  ASSERT_NE(c1, nullptr);
  EXPECT_EQ(c1->in_bytes, 2 * 256 * 56 * 56 * 4);
  EXPECT_EQ(c1->out_bytes, 2 * 64 * 56 * 56 * 4);
  EXPECT_EQ(c1->weight_bytes, 64 * 256 * 4);
}

TEST(Predict, StaticIsBaseline) {
  const auto pred =
      predict_block(stage1_block(), DynamicConfig::fixed(), ActivationProfile::uniform(0.2), FusionFlags::all(), v100(), 128);
  EXPECT_EQ(pred.r_ell, 1.0);
  EXPECT_NEAR(pred.latency.total_s, pred.latency.data_s + pred.latency.compute_s + pred.latency.const_s, 1e-18);
}

TEST(Predict, LayerIsExpectedLatency) {
  const auto b = stage1_block();
  const auto stat = total_us(b, DynamicConfig::fixed(), 1);
  const auto half = total_us(b, DynamicConfig::layer(), 0.5);
  const auto zero = total_us(b, DynamicConfig::layer(), 0.0);
  EXPECT_NEAR(half, 0.5 * stat + zero, 1e-6 * stat);
  EXPECT_LT(zero, 0.1 * stat);
}

TEST(Predict, MonotoneInRateEveryPresetAndParadigm) {
  const auto b = stage1_block();
  for (const auto& hw : hardware_presets()) {
    for (auto cfg : {DynamicConfig::spatial(1), DynamicConfig::spatial(4), DynamicConfig::spatial(8),
                     DynamicConfig::channel(1), DynamicConfig::channel(2), DynamicConfig::layer()}) {
      double prev = 0;
      for (int i = 0; i <= 10; ++i) {
        const double t = total_us(b, cfg, i / 10.0, FusionFlags::all(), hw, 8);
        ASSERT_GE(t, prev) << hw.name << " " << to_string(cfg.paradigm) << " r=" << i / 10.0;
        prev = t;
      }
    }
  }
}

TEST(Predict, SpatialS4BeatsS1) {
  const auto b = stage1_block();
  for (int i = 1; i <= 9; ++i) {
    EXPECT_LT(total_us(b, DynamicConfig::spatial(4), i / 10.0), total_us(b, DynamicConfig::spatial(1), i / 10.0));
  }
}

TEST(Predict, ChannelComputeConvex) {
  const auto b = stage1_block();
  std::vector<double> c;
  for (int i = 0; i <= 20; ++i) {
    c.push_back(predict_block(b, DynamicConfig::channel(1), ActivationProfile::uniform(i / 20.0), FusionFlags::all(),
                              v100(), 128)
                    .latency.compute_s);
  }
  for (std::size_t i = 1; i + 1 < c.size(); ++i) EXPECT_GE(c[i + 1] - 2 * c[i] + c[i - 1], -1e-15) << i;
}

TEST(Predict, FullRateNeverFaster) {
  const auto b = stage1_block();
  for (auto cfg : {DynamicConfig::spatial(4), DynamicConfig::channel(1), DynamicConfig::layer()}) {
    EXPECT_GE(predict_block(b, cfg, ActivationProfile::uniform(1), FusionFlags::all(), v100(), 128).r_ell, 1.0);
  }
}

TEST(Predict, FullRateNeverFasterAcrossNetworkAndPresets) {
  const auto r50 = std::vector<BlockSpec>{
      make_bottleneck({64, 56, 56}, 64, 256, 1),    make_bottleneck({256, 56, 56}, 64, 256, 1),
      make_bottleneck({256, 56, 56}, 128, 512, 2),  make_bottleneck({512, 28, 28}, 128, 512, 1),
      make_bottleneck({512, 28, 28}, 256, 1024, 2), make_bottleneck({1024, 14, 14}, 256, 1024, 1),
      make_bottleneck({1024, 14, 14}, 512, 2048, 2), make_bottleneck({2048, 7, 7}, 512, 2048, 1)};
  for (const auto& hw : hardware_presets()) {
    for (const auto& b : r50) {
      std::vector<DynamicConfig> cfgs{DynamicConfig::layer(), DynamicConfig::channel(1), DynamicConfig::channel(2)};
      for (auto s : enumerate_granularities(b.conv2_output_shape().height)) cfgs.push_back(DynamicConfig::spatial(s));
      for (const auto& cfg : cfgs) {
        const auto p = predict_block(b, cfg, ActivationProfile::uniform(1), FusionFlags::all(), hw, 128);
        ASSERT_GE(p.r_ell, 1.0) << hw.name << " " << to_string(cfg.paradigm);
      }
    }
  }
}

TEST(Predict, MoreHardwareNeverSlower) {
  const auto b = stage1_block();
  auto fast_mem = v100();
  fast_mem.offchip_bandwidth_bytes_per_s *= 2;
  auto more_pes = v100();
  more_pes.pe_count *= 2;
  for (auto cfg : {DynamicConfig::fixed(), DynamicConfig::spatial(4), DynamicConfig::channel(2), DynamicConfig::layer()}) {
    const auto p = ActivationProfile::uniform(0.5);
    const auto base = predict_block(b, cfg, p, FusionFlags::all(), v100(), 128).latency;
    EXPECT_LE(predict_block(b, cfg, p, FusionFlags::all(), fast_mem, 128).latency.total_s, base.total_s);
    EXPECT_LE(predict_block(b, cfg, p, FusionFlags::all(), more_pes, 128).latency.compute_s, base.compute_s);
  }
}

TEST(Predict, ConstOverheadOncePerBlock) {
  auto hw = v100();
  const auto base = predict_block(stage1_block(), DynamicConfig::spatial(4), ActivationProfile::uniform(0.5),
                                  FusionFlags::all(), hw, 16);
  hw.const_overhead_s = 3e-6;
  const auto with = predict_block(stage1_block(), DynamicConfig::spatial(4), ActivationProfile::uniform(0.5),
                                  FusionFlags::all(), hw, 16);
  EXPECT_NEAR(with.latency.total_s - base.latency.total_s, 3e-6, 1e-15);
}

TEST(Fusion, AblationOrdering) {
  const auto b = stage1_block();
  const auto rows = ablate_fusion(b, DynamicConfig::spatial(4), ActivationProfile::uniform(0.6), v100(), 128);
  ASSERT_EQ(rows.size(), 8u);
  for (unsigned bits = 0; bits < 8; ++bits) {
    EXPECT_EQ(rows[bits].flags, FusionFlags::from_bits(bits));
    for (unsigned flag : {1u, 2u, 4u}) {
      if (bits & flag) continue;
      EXPECT_LE(rows[bits | flag].latency.total_s, rows[bits].latency.total_s) << bits << "+" << flag;
    }
  }
  EXPECT_LE(rows[7].latency.total_s, 0.9 * rows[0].latency.total_s);
}

TEST(Fusion, StaticRowsEqual) {
  const auto rows = ablate_fusion(stage1_block(), DynamicConfig::fixed(), ActivationProfile::uniform(1), v100(), 128);
  for (const auto& r : rows) EXPECT_EQ(r.latency.total_s, rows[0].latency.total_s);
}

TEST(ChannelMasker, TwoLayerCheaperThanSingleLinearOnTx2) {
  const auto b = make_bottleneck({2048, 7, 7}, 512, 2048, 1);
  const auto tx2 = load_hardware("TX2");
  const auto mlp = search_schedule(channel_masker_workload(b, 1, 1, ChannelMaskerDesign::kTwoLayerMlp), tx2);
  const auto lin = search_schedule(channel_masker_workload(b, 1, 1, ChannelMaskerDesign::kSingleLinear), tx2);
  EXPECT_LT(mlp.predicted.total_s, lin.predicted.total_s);
}

TEST(PredictionCsv, ColumnCount) {
  const auto hdr = prediction_csv_header();
  EXPECT_EQ(hdr, "device,block_id,paradigm,S,G,r,batch,tile,waves,data_us,compute_us,total_us,r_ell");
  const auto pred = predict_block(stage1_block(), DynamicConfig::spatial(4), ActivationProfile::uniform(0.6),
                                  FusionFlags::all(), v100(), 128);
  const auto row = prediction_csv_row(v100(), "s1b2", DynamicConfig::spatial(4), 0.6, 128, pred);
  EXPECT_EQ(std::count(row.begin(), row.end(), ','), std::count(hdr.begin(), hdr.end(), ','));
}

#include <gtest/gtest.h>

#include <random>

#include "dynlat/error.hpp"
#include "dynlat/flops.hpp"
#include "dynlat/network.hpp"
#include "oracles.hpp"

using namespace dynlat;

TEST(ConvMacs, HandComputedLayers) {
  EXPECT_EQ(conv_macs({64, 64, 3, 1, 1, false}, {64, 56, 56}), 115'605'504);
  EXPECT_EQ(conv_macs({64, 256, 1, 1, 1, false}, {256, 56, 56}), 51'380'224);
  EXPECT_EQ(conv_macs({64, 64, 3, 1, 4, false}, {64, 56, 56}), 115'605'504 / 4);
}

TEST(ConvMacs, EmptyOutputIsZero) {
  EXPECT_EQ(conv_macs({64, 64, 3, 1, 1, false}, {64, 0, 56}), 0);
}

TEST(MaskerMacs, ChannelHiddenWidth) {
  EXPECT_EQ(channel_masker_hidden(512), 32);
  EXPECT_EQ(channel_masker_hidden(64), 16);
  EXPECT_EQ(channel_masker_hidden(1), 16);
  EXPECT_EQ(channel_masker_hidden(1024), 64);
}

TEST(MaskerMacs, SpatialPointwisePart) {
  const auto b = make_bottleneck({64, 56, 56}, 64, 256, 1);
  const auto pooled = 64 * 56 * 56;
  EXPECT_EQ(masker_macs(b, DynamicConfig::spatial(4)) - pooled, 14 * 14 * 2 * 64);
  EXPECT_EQ(masker_macs(b, DynamicConfig::spatial(4)) - pooled, 25'088);
}

TEST(MaskerMacs, ChannelMlp) {
  const auto b = make_bottleneck({256, 14, 14}, 512, 256, 1);
  // D = 512, hidden 32: C*h + h*2D
  EXPECT_EQ(masker_macs(b, DynamicConfig::channel(1)), 256 * 32 + 32 * 2 * 512);
  EXPECT_EQ(masker_macs(b, DynamicConfig::fixed()), 0);
}

TEST(Speedup, ChannelFiveTwelfths) {
  EXPECT_NEAR(channel_speedup(1, 1, 1, 0.5), 5.0 / 12.0, 1e-15);
  EXPECT_DOUBLE_EQ(channel_speedup(3, 5, 7, 1.0), 1.0);
  EXPECT_DOUBLE_EQ(channel_speedup(3, 5, 7, 0.0), 0.0);
}

TEST(Speedup, SpatialFormula) {
  EXPECT_NEAR(spatial_speedup(1, 2, 2, 0.5, 0.6), 0.52, 1e-15);
  EXPECT_THROW(spatial_speedup(0, 0, 0, 0.5, 0.5), Error);
}

TEST(Speedup, ChannelNeverExceedsRate) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> f(0, 10), r(0, 1);
  for (int i = 0; i < 10000; ++i) {
    const double f1 = f(rng), f2 = f(rng), f3 = f(rng), rc = r(rng);
    const double s = channel_speedup(f1, f2, f3, rc);
    ASSERT_LE(s, rc + 1e-15);
    if (f2 > 0 && rc > 0 && rc < 1) ASSERT_LT(s, rc);
  }
  EXPECT_DOUBLE_EQ(channel_speedup(1, 0, 1, 0.3), 0.3);
}

TEST(Speedup, SpatialBetweenRates) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> f(0, 10), r(0, 1);
  for (int i = 0; i < 10000; ++i) {
    const double rs = r(rng), rd = rs + (1 - rs) * r(rng);
    const double s = spatial_speedup(f(rng), f(rng), f(rng), rs, rd);
    ASSERT_GE(s, rs - 1e-15);
    ASSERT_LE(s, rd + 1e-15);
  }
}

TEST(BlockFlops, StaticEqualsConvMacsSums) {
  const auto b = make_bottleneck({256, 56, 56}, 128, 512, 2);
  const auto f = block_flops_static(b);
  EXPECT_EQ(f.conv1, 56 * 56 * 256 * 128);
  EXPECT_EQ(f.conv2, 28 * 28 * 128 * 128 * 9);
  EXPECT_EQ(f.conv3, 28 * 28 * 128 * 512);
  EXPECT_EQ(f.downsample, 28 * 28 * 256 * 512);
  EXPECT_EQ(f.masker, 0);
  EXPECT_EQ(f.total(), f.conv1 + f.conv2 + f.conv3 + f.downsample);
}

TEST(BlockFlops, ChannelScaledSum) {
  const auto b = make_bottleneck({256, 56, 56}, 64, 256, 1);
  const auto s = block_flops_static(b);
  const auto d = block_flops_dynamic(b, DynamicConfig::channel(1), ActivationProfile::uniform(0.5));
  EXPECT_DOUBLE_EQ(d.conv1, 0.5 * s.conv1);
  EXPECT_DOUBLE_EQ(d.conv2, 0.25 * s.conv2);
  EXPECT_DOUBLE_EQ(d.conv3, 0.5 * s.conv3);
  EXPECT_DOUBLE_EQ(theoretical_speedup(s, d), channel_speedup(s.conv1, s.conv2, s.conv3, 0.5));
}

TEST(BlockFlops, FullSpatialIsStaticPlusMasker) {
  const auto b = make_bottleneck({256, 56, 56}, 64, 256, 1);
  auto p = ActivationProfile::uniform(1.0);
  p.r_spatial_dilated = 1.0;
  const auto cfg = DynamicConfig::spatial(4);
  const auto s = block_flops_static(b);
  const auto d = block_flops_dynamic(b, cfg, p);
  EXPECT_EQ(d.convs(), s.convs());
  EXPECT_EQ(d.total(), s.total() + static_cast<double>(masker_macs(b, cfg)));
}

TEST(BlockFlops, LayerZeroKeepsMaskerOnly) {
  const auto b = make_bottleneck({256, 56, 56}, 64, 256, 1);
  const auto d = block_flops_dynamic(b, DynamicConfig::layer(), ActivationProfile::uniform(0.0));
  EXPECT_EQ(d.convs(), 0);
  EXPECT_GT(d.masker, 0);
}

TEST(BlockFlops, LayerMatchesSpatialAtFeatureSize) {
  const auto b = make_bottleneck({512, 28, 28}, 128, 512, 1);
  for (double r : {0.0, 0.3, 0.7, 1.0}) {
    auto p = ActivationProfile::uniform(r);
    p.r_spatial_dilated = r;
    const auto l = block_flops_dynamic(b, DynamicConfig::layer(), p);
    const auto s = block_flops_dynamic(b, DynamicConfig::spatial(28), p);
    EXPECT_DOUBLE_EQ(l.total() - l.masker, s.total() - s.masker);
  }
}

TEST(BlockFlops, MonotoneInEachRate) {
  const auto b = make_bottleneck({256, 28, 28}, 128, 512, 1, 8, 4);
  for (auto cfg : {DynamicConfig::spatial(4), DynamicConfig::channel(2), DynamicConfig::layer()}) {
    double prev = -1;
    for (int i = 0; i <= 20; ++i) {
      const auto d = block_flops_dynamic(b, cfg, ActivationProfile::uniform(i / 20.0));
      ASSERT_GE(d.total(), prev);
      prev = d.total();
    }
  }
}

TEST(DilatedRate, EstimateAndClamp) {
  EXPECT_DOUBLE_EQ(dilated_rate_estimate(0.25, 4, 3), 0.25 * 36.0 / 16.0);
  EXPECT_DOUBLE_EQ(dilated_rate_estimate(0.9, 1, 3), 1.0);
}

TEST(NetworkFlops, ResNetAgainstSpreadsheet) {
  EXPECT_EQ(build_network("resnet50").static_macs(), oracle::spreadsheet_macs(oracle::resnet({3, 4, 6, 3})));
  EXPECT_EQ(build_network("resnet101").static_macs(), oracle::spreadsheet_macs(oracle::resnet({3, 4, 23, 3})));
  const double r50 = static_cast<double>(oracle::spreadsheet_macs(oracle::resnet({3, 4, 6, 3})));
  EXPECT_GE(r50, 3.8e9);
  EXPECT_LE(r50, 4.2e9);
}

TEST(NetworkFlops, RegNetAgainstSpreadsheet) {
  EXPECT_EQ(build_network("regnety-800mf").static_macs(), oracle::spreadsheet_macs(oracle::regnety_800mf()));
  EXPECT_EQ(build_network("regnety-400mf").static_macs(), oracle::spreadsheet_macs(oracle::regnety_400mf()));
  const double m = static_cast<double>(oracle::spreadsheet_macs(oracle::regnety_800mf()));
  EXPECT_GE(m, 0.76e9);
  EXPECT_LE(m, 0.84e9);
}

TEST(NetworkFlops, DetectionResolutionBackbone) {
  auto net = build_network("resnet101", TensorShape{3, 800, 1333});
  net.include_classifier = false;
  EXPECT_EQ(net.static_macs(), oracle::spreadsheet_macs(oracle::resnet({3, 4, 23, 3}, 800, 1333), false));
}

TEST(NetworkFlops, LayerHalfRateOnResNet101) {
  const auto net = build_network("resnet101");
  const auto n = net.block_count();
  const auto rep = network_flops(net, std::vector<DynamicConfig>(n, DynamicConfig::layer()),
                                 std::vector<ActivationProfile>(n, ActivationProfile::uniform(0.5)));
  EXPECT_GE(rep.ratio, 0.45);
  EXPECT_LE(rep.ratio, 0.55);
  EXPECT_NE(rep.ratio, 0.5);
}

TEST(NetworkFlops, LayerZeroLeavesStemClassifierMaskers) {
  const auto net = build_network("resnet50");
  const auto n = net.block_count();
  const auto rep = network_flops(net, std::vector<DynamicConfig>(n, DynamicConfig::layer()),
                                 std::vector<ActivationProfile>(n, ActivationProfile::uniform(0.0)));
  double maskers = 0;
  for (const auto& b : rep.blocks_dynamic) maskers += b.masker;
  EXPECT_DOUBLE_EQ(rep.f_dyn, static_cast<double>(rep.stem + rep.classifier) + maskers);
}

TEST(NetworkFlops, DynamicBoundedByStaticPlusMaskers) {
  const auto net = build_network("resnet50");
  const auto n = net.block_count();
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<ActivationProfile> profiles;
  for (std::size_t i = 0; i < n; ++i) profiles.push_back(ActivationProfile::uniform(u(rng)));
  const auto plan = parse_plan("4-4-2-1", net, Paradigm::kSpatial);
  const auto rep = network_flops(net, block_configs(net, Paradigm::kSpatial, plan), profiles);
  double maskers = 0;
  for (const auto& b : rep.blocks_dynamic) maskers += b.masker;
  EXPECT_LE(rep.f_dyn, static_cast<double>(rep.f_stat) + maskers);
  EXPECT_DOUBLE_EQ(rep.ratio, rep.f_dyn / static_cast<double>(rep.f_stat));
}

TEST(NetworkFlops, ProfileCountMismatch) {
  const auto net = build_network("resnet50");
  try {
    network_flops(net, {DynamicConfig::layer()}, {ActivationProfile::uniform(1)});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kProfileCountMismatch);
  }
}

TEST(FlopsCsv, HeaderAndRow) {
  EXPECT_EQ(flops_csv_header(), "block_id,F1,F2,F3,masker,se,total_static,total_dynamic,ratio");
  const auto b = make_bottleneck({256, 56, 56}, 64, 256, 1);
  const auto s = block_flops_static(b);
  const auto row = flops_csv_row("s1b2", s, s);
  EXPECT_EQ(std::count(row.begin(), row.end(), ','), 8);
  EXPECT_EQ(row.substr(row.rfind(',') + 1), "1");
}

TEST(FlopsConvention, TwoPerMac) {
  EXPECT_EQ(macs_to_flops(10, false), 10);
  EXPECT_EQ(macs_to_flops(10, true), 20);
}

#pragma once

// Multiply-accumulate accounting for static and dynamic bottleneck blocks.
// One MAC is counted as one FLOP unless a caller opts into the x2 convention.

#include <cstdint>
#include <string>
#include <vector>

#include "dynlat/core_model.hpp"

namespace dynlat {

struct NetworkSpec;

/// Per-layer MACs of one block. Values are expectations under an activation
/// profile, hence real-valued; static breakdowns hold exact integers.
struct FlopsBreakdown {
  double conv1 = 0;
  double conv2 = 0;
  double conv3 = 0;
  double masker = 0;
  double se = 0;
  double downsample = 0;

  double convs() const { return conv1 + conv2 + conv3; }
  double total() const { return conv1 + conv2 + conv3 + masker + se + downsample; }
};

struct NetworkFlopsReport {
  double f_dyn = 0;
  std::int64_t f_stat = 0;
  double ratio = 0;
  std::int64_t stem = 0;
  std::int64_t classifier = 0;
  std::vector<FlopsBreakdown> blocks_static;
  std::vector<FlopsBreakdown> blocks_dynamic;
};

/// H_out * W_out * C_out * (C_in / groups) * k^2, bias ignored.
std::int64_t conv_macs(const ConvLayerSpec& layer, const TensorShape& out_shape);

/// Hidden width of the channel masker MLP: max(floor(D / 16), 16).
std::int64_t channel_masker_hidden(std::int64_t mask_dim);

/// Spatial/Layer: one accumulate per pooled input element plus the 1x1
/// conv to two logits per coarse cell. Channel: the two MLP layers.
std::int64_t masker_macs(const BlockSpec& block, const DynamicConfig& cfg);

FlopsBreakdown block_flops_static(const BlockSpec& block);
FlopsBreakdown block_flops_dynamic(const BlockSpec& block, const DynamicConfig& cfg, const ActivationProfile& prof);

/// One-ring halo estimate of the dilated rate: min(1, r * ((S + k - 1) / S)^2).
double dilated_rate_estimate(double r_spatial, std::int64_t granularity, int kernel);

/// Resolves r^s_dil: the profile's exact value when present, else the estimate.
double dilated_rate(const BlockSpec& block, const DynamicConfig& cfg, const ActivationProfile& prof);

/// Ratio of dynamic to static convolution MACs (maskers, SE and shortcut
/// excluded). Throws kDivisionByZero on an empty static block.
double theoretical_speedup(const FlopsBreakdown& stat, const FlopsBreakdown& dyn);

double spatial_speedup(double f1, double f2, double f3, double r_spatial, double r_dilated);
double channel_speedup(double f1, double f2, double f3, double r_channel);

/// Sums block MACs over the network (stem and classifier static). One config
/// and one profile per block, in network order.
NetworkFlopsReport network_flops(const NetworkSpec& net, const std::vector<DynamicConfig>& configs,
                                 const std::vector<ActivationProfile>& profiles);

/// Reporting helper for the "1 MAC = 2 FLOPs" convention.
inline double macs_to_flops(double macs, bool two_flops_per_mac) { return two_flops_per_mac ? 2 * macs : macs; }

// CSV: block_id,F1,F2,F3,masker,se,total_static,total_dynamic,ratio
// F1..F3, masker and se are the dynamic values; ratio = total_dynamic / total_static.
std::string flops_csv_header();
std::string flops_csv_row(const std::string& block_id, const FlopsBreakdown& stat, const FlopsBreakdown& dyn);

}  // namespace dynlat

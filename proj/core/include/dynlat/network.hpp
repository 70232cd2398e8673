#pragma once

// Whole-network definitions (ResNet / RegNetY families), per-stage
// granularity plans, and network-level FLOPs / latency aggregation.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dynlat/core_model.hpp"
#include "dynlat/flops.hpp"
#include "dynlat/latency.hpp"

namespace dynlat {

struct StemSpec {
  ConvLayerSpec conv;
  bool max_pool = false;  // 3x3, stride 2, padding 1
};

struct StageSpec {
  std::int64_t block_count = 1;
  BlockSpec first_block;     // carries the stage stride / projection shortcut
  BlockSpec block_template;  // blocks 2..n (equal to first_block when n == 1)
  bool stride_first = false;
};

struct NetworkSpec {
  std::string name;
  TensorShape input_shape;
  StemSpec stem;
  std::vector<StageSpec> stages;
  std::int64_t classifier_features = 0;
  std::int64_t num_classes = 1000;
  bool include_classifier = true;

  std::vector<BlockSpec> blocks() const;
  std::size_t block_count() const;
  // (stage index, block index within stage) for every block, network order.
  std::vector<std::pair<std::size_t, std::size_t>> block_positions() const;
  TensorShape stem_output_shape() const;
  std::int64_t stem_macs() const;
  std::int64_t classifier_macs() const;
  std::int64_t static_macs() const;
};

/// Stage description as written in architecture files.
struct ArchStage {
  std::int64_t depth = 1;
  std::int64_t width = 1;
  std::int64_t bottleneck_ratio = 1;
  std::int64_t groups = 1;
  std::optional<std::int64_t> se_reduction;
  int stride = 1;
};

struct Architecture {
  std::string name;
  TensorShape input{3, 224, 224};
  std::int64_t stem_width = 64;
  int stem_kernel = 7;
  int stem_stride = 2;
  bool stem_pool = true;
  std::int64_t num_classes = 1000;
  std::vector<ArchStage> stages;
};

Architecture parse_architecture(std::string_view text);
NetworkSpec instantiate(const Architecture& arch, std::optional<TensorShape> input = std::nullopt);

/// Names of the shipped architectures (resnet50, resnet101, regnety-400mf,
/// regnety-800mf).
std::vector<std::string> network_names();
std::string_view shipped_architecture_text(std::string_view name);

/// Shipped name or path to an architecture file. `input` overrides the
/// architecture's default resolution.
NetworkSpec build_network(std::string_view name_or_path, std::optional<TensorShape> input = std::nullopt);

/// Per-stage S (spatial) or G (channel) values, written "a-b-c-d".
struct GranularityPlan {
  Paradigm paradigm = Paradigm::kSpatial;
  std::vector<std::int64_t> values;

  std::string to_string() const;
  friend bool operator==(const GranularityPlan&, const GranularityPlan&) = default;
};

GranularityPlan parse_plan(std::string_view text, const NetworkSpec& net, Paradigm paradigm);

/// One DynamicConfig per block. Spatial and Channel require a plan.
std::vector<DynamicConfig> block_configs(const NetworkSpec& net, Paradigm paradigm,
                                         const std::optional<GranularityPlan>& plan);

struct NetworkPrediction {
  std::vector<BlockPrediction> blocks;
  LatencyBreakdown stem;
  LatencyBreakdown classifier;
  LatencyBreakdown total;
  LatencyBreakdown static_total;
  double r_ell = 1.0;
  double per_image_s = 0.0;
  NetworkFlopsReport flops;
};

/// `rates` holds one activation rate per block, or a single rate broadcast
/// to all blocks.
NetworkPrediction predict_network(const NetworkSpec& net, Paradigm paradigm,
                                  const std::optional<GranularityPlan>& plan, const std::vector<double>& rates,
                                  const HardwareSpec& hw, std::int64_t batch,
                                  const FusionFlags& flags = FusionFlags::all(), const LatencyOptions& opts = {});

std::vector<Workload> stem_workloads(const NetworkSpec& net, std::int64_t batch);
std::vector<Workload> classifier_workloads(const NetworkSpec& net, std::int64_t batch);

struct SweepRequest {
  NetworkSpec net;
  HardwareSpec hw;
  Paradigm paradigm = Paradigm::kSpatial;
  // Block-level sweep when set (1-based stage, 0-based block in stage,
  // reported 1-based);
  // otherwise one row per network plan.
  std::optional<std::size_t> stage;
  std::size_t block = 0;
  std::vector<std::int64_t> granularities;  // block-level S or G grid
  std::vector<GranularityPlan> plans;       // network-level grid
  std::vector<double> rates;
  std::int64_t batch = 128;
  FusionFlags flags = FusionFlags::all();
  LatencyOptions options;
};

struct SweepRow {
  std::string net;
  std::string device;
  Paradigm paradigm = Paradigm::kSpatial;
  std::string stage;
  std::string block;
  std::string s;
  std::string g;
  double r = 0;
  std::int64_t batch = 1;
  double flops_ratio = 0;
  double r_ell = 0;
  double total_us = 0;
};

/// Rows ordered by granularity (or plan) ascending, then rate ascending.
std::vector<SweepRow> sweep(const SweepRequest& req);

std::string sweep_csv_header();
std::string sweep_csv_row(const SweepRow& row);

}  // namespace dynlat

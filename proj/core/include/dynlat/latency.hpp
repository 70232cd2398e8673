#pragma once

// Tile-level latency predictor for (dynamic) bottleneck blocks.
//
// Each operator's output is split into T_P x T_C x T_S1 x T_S2 tiles that are
// distributed over the device's processing engines. A tile's cost is the
// traffic it moves through a three-level memory hierarchy (off-chip ->
// on-chip global -> PE-local) plus its arithmetic at peak FP32 throughput.
// The best power-of-two tile shape is found by exhaustive search.

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dynlat/core_model.hpp"

namespace dynlat {

struct TileShape {
  std::int64_t t_p = 1;
  std::int64_t t_c = 1;
  std::int64_t t_s1 = 1;
  std::int64_t t_s2 = 1;

  auto operator<=>(const TileShape&) const = default;
  std::string to_string() const;
};

enum class OperatorKind {
  kConv,
  kPointwiseConv,
  kMaskerConvFused,
  kMaskerConv,
  kGatherConv,
  kGather,
  kScatterAdd,
  kScatter,
  kAdd,
  kPool,
  kChannelMaskerMlp,
  kSe,
};

std::string_view to_string(OperatorKind kind);

/// One operator instance. `dims` is its output iteration space: (patches or
/// batch, output channels, rows, cols). Byte counts are unique off-chip
/// traffic; the per-tile footprint model below drives on-chip traffic.
struct Workload {
  std::string name;
  OperatorKind kind = OperatorKind::kConv;
  std::array<std::int64_t, 4> dims{0, 0, 0, 0};

  // A tile of `rows x cols` outputs reads ((rows-1)*stride+window) x
  // ((cols-1)*stride+window) input positions per channel and operand.
  std::array<int, 2> window{1, 1};
  std::array<int, 2> stride{1, 1};
  // Input channels read by a tile of tc output channels:
  // min(input_channels, ceil(tc / out_per_group) * reduce_channels).
  std::int64_t reduce_channels = 1;
  std::int64_t out_per_group = 1;
  std::int64_t input_channels = 1;
  std::int64_t operands = 1;
  // Share of those input channels actually read (channel skipping).
  double channel_fraction = 1.0;

  std::int64_t in_bytes = 0;
  std::int64_t weight_bytes = 0;
  std::int64_t out_bytes = 0;
  std::int64_t macs = 0;

  // Probability that the operator executes; layer skipping weights the
  // static block by its execution rate.
  double expected_fraction = 1.0;

  bool empty() const { return dims[0] <= 0 || dims[1] <= 0 || dims[2] <= 0 || dims[3] <= 0; }
};

struct LatencyBreakdown {
  double data_s = 0;
  double compute_s = 0;
  double const_s = 0;
  double total_s = 0;

  LatencyBreakdown& operator+=(const LatencyBreakdown& o);
  LatencyBreakdown scaled(double f) const;
};

struct SchedulePlan {
  TileShape tile;
  std::int64_t tile_count = 1;
  std::int64_t waves = 1;
  LatencyBreakdown predicted;
};

struct FusionFlags {
  bool fuse_masker_conv1 = true;
  bool fuse_gather_conv = true;
  bool fuse_scatter_add = true;

  static FusionFlags all() { return {true, true, true}; }
  static FusionFlags none() { return {false, false, false}; }
  // bit 2 = masker-conv1, bit 1 = gather-conv, bit 0 = scatter-add
  static FusionFlags from_bits(unsigned bits) { return {(bits & 4u) != 0, (bits & 2u) != 0, (bits & 1u) != 0}; }
  std::string to_string() const;
  friend bool operator==(const FusionFlags&, const FusionFlags&) = default;
};

struct LatencyOptions {
  // Worker threads for candidate evaluation; results do not depend on it.
  int threads = 1;
  // Count two operations per lane per cycle (FMA) instead of one MAC.
  bool fma_doubling = false;
};

enum class ChannelMaskerDesign { kTwoLayerMlp, kSingleLinear };

/// Cartesian product of power-of-two candidates not exceeding each dim,
/// in lexicographic order.
std::vector<TileShape> enumerate_tile_shapes(const std::array<std::int64_t, 4>& dims);

std::int64_t tile_count(const std::array<std::int64_t, 4>& dims, const TileShape& tile);

/// l_data = l_off2on + l_global2local + l_local2global + l_on2off.
double data_latency(const Workload& w, const TileShape& tile, const HardwareSpec& hw);

/// waves * (MACs of one full tile) / (lanes * frequency), waves = ceil(tiles / PEs).
double compute_latency(const Workload& w, const TileShape& tile, const HardwareSpec& hw,
                       const LatencyOptions& opts = {});

SchedulePlan evaluate_tile(const Workload& w, const TileShape& tile, const HardwareSpec& hw,
                           const LatencyOptions& opts = {});

/// Minimum-latency tile over enumerate_tile_shapes(w.dims); ties go to the
/// lexicographically smallest tile. Requires a non-empty workload.
SchedulePlan search_schedule(const Workload& w, const HardwareSpec& hw, const LatencyOptions& opts = {});

/// Operator list of one block under a paradigm, for `batch` samples.
std::vector<Workload> block_workloads(const BlockSpec& block, const DynamicConfig& cfg, const ActivationProfile& prof,
                                      const FusionFlags& flags, std::int64_t batch);

/// Pooling + MLP channel masker for mask dimension conv2_width / G.
Workload channel_masker_workload(const BlockSpec& block, std::int64_t granularity, std::int64_t batch,
                                 ChannelMaskerDesign design = ChannelMaskerDesign::kTwoLayerMlp);

/// Active patch count for a rate: round(r * coarse cells * batch).
std::int64_t active_patches(const BlockSpec& block, const DynamicConfig& cfg, double r_spatial, std::int64_t batch);

struct WorkloadPlan {
  Workload workload;
  std::optional<SchedulePlan> plan;  // empty for zero-size workloads
  LatencyBreakdown contribution;     // plan latency times expected_fraction
};

struct BlockPrediction {
  LatencyBreakdown latency;
  LatencyBreakdown static_latency;
  double r_ell = 1.0;  // latency / static_latency
  std::vector<WorkloadPlan> workloads;

  // The workload with the largest contribution; used for one-line reports.
  const WorkloadPlan* dominant() const;
};

/// Sum of the best schedules of every workload, plus the device constant
/// once per block.
LatencyBreakdown predict_workloads(const std::vector<Workload>& workloads, const HardwareSpec& hw,
                                   const LatencyOptions& opts, std::vector<WorkloadPlan>* plans = nullptr);

BlockPrediction predict_block(const BlockSpec& block, const DynamicConfig& cfg, const ActivationProfile& prof,
                              const FusionFlags& flags, const HardwareSpec& hw, std::int64_t batch,
                              const LatencyOptions& opts = {});

struct FusionAblationRow {
  FusionFlags flags;
  LatencyBreakdown latency;
};

/// One prediction per fusion combination, ordered by FusionFlags bits 0..7.
std::vector<FusionAblationRow> ablate_fusion(const BlockSpec& block, const DynamicConfig& cfg,
                                             const ActivationProfile& prof, const HardwareSpec& hw,
                                             std::int64_t batch, const LatencyOptions& opts = {});

// CSV: device,block_id,paradigm,S,G,r,batch,tile,waves,data_us,compute_us,total_us,r_ell
std::string prediction_csv_header();
std::string prediction_csv_row(const HardwareSpec& hw, const std::string& block_id, const DynamicConfig& cfg,
                               double rate, std::int64_t batch, const BlockPrediction& pred);

}  // namespace dynlat

#include "dynlat/latency.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <thread>

#include "dynlat/error.hpp"
#include "dynlat/flops.hpp"
#include "dynlat/kv.hpp"

namespace dynlat {
namespace {

std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

std::vector<std::int64_t> pow2_candidates(std::int64_t dim) {
  std::vector<std::int64_t> out;
  for (std::int64_t t = 1; t <= dim; t *= 2) out.push_back(t);
  return out;
}

// Sum over the tiles of one dimension of the input extent each tile reads.
double extent_sum(std::int64_t dim, std::int64_t tile, int stride, int window) {
  const auto count = ceil_div(dim, tile);
  return static_cast<double>(stride) * static_cast<double>(dim) + static_cast<double>(count) * (window - stride);
}

double channel_sum(const Workload& w, std::int64_t tile) {
  auto channels_for = [&](std::int64_t tc) {
    const auto groups = ceil_div(tc, std::max<std::int64_t>(1, w.out_per_group));
    return static_cast<double>(std::min(w.input_channels, groups * w.reduce_channels));
  };
  const auto full = w.dims[1] / tile;
  const auto rem = w.dims[1] % tile;
  double sum = static_cast<double>(full) * channels_for(tile);
  if (rem > 0) sum += channels_for(rem);
  return sum;
}

constexpr double kBytes = static_cast<double>(kBytesPerElement);

// ---- workload builders --------------------------------------------------

Workload conv_workload(std::string name, OperatorKind kind, const ConvLayerSpec& layer, const TensorShape& in,
                       std::int64_t batch) {
  const auto out = layer.output_shape(in);
  Workload w;
  w.name = std::move(name);
  w.kind = kind;
  w.dims = {batch, out.channels, out.height, out.width};
  w.window = {layer.kernel, layer.kernel};
  w.stride = {layer.stride, layer.stride};
  w.reduce_channels = layer.in_channels / layer.groups;
  w.out_per_group = layer.out_channels / layer.groups;
  w.input_channels = layer.in_channels;
  w.in_bytes = batch * in.elements() * kBytesPerElement;
  w.weight_bytes = layer.weight_count() * kBytesPerElement;
  w.out_bytes = batch * out.elements() * kBytesPerElement;
  w.macs = batch * conv_macs(layer, out);
  return w;
}

// Elementwise operator over (p, c, s1, s2) reading `operands` inputs of the
// same shape.
Workload elementwise(std::string name, OperatorKind kind, std::array<std::int64_t, 4> dims, std::int64_t operands) {
  Workload w;
  w.name = std::move(name);
  w.kind = kind;
  w.dims = dims;
  w.operands = operands;
  w.input_channels = dims[1];
  const auto elems = dims[0] * dims[1] * dims[2] * dims[3];
  w.in_bytes = operands * elems * kBytesPerElement;
  w.out_bytes = elems * kBytesPerElement;
  w.macs = operands > 1 ? elems : 0;
  return w;
}

// Per-channel pooling from `in` spatial extent down to out_h x out_w cells.
Workload pool_workload(std::string name, std::int64_t batch, std::int64_t channels, std::int64_t in_h,
                       std::int64_t in_w, std::int64_t out_h, std::int64_t out_w) {
  Workload w;
  w.name = std::move(name);
  w.kind = OperatorKind::kPool;
  w.dims = {batch, channels, out_h, out_w};
  const int wh = static_cast<int>(in_h / out_h);
  const int ww = static_cast<int>(in_w / out_w);
  w.window = {wh, ww};
  w.stride = {wh, ww};
  w.input_channels = channels;
  w.in_bytes = batch * channels * in_h * in_w * kBytesPerElement;
  w.out_bytes = batch * channels * out_h * out_w * kBytesPerElement;
  w.macs = batch * channels * in_h * in_w;
  return w;
}

// Squeeze (global pool + two FC layers) and excite (channel-wise scale) over
// `elems_per_sample` spatial positions of `channels` channels.
void append_se(std::vector<Workload>& out, const BlockSpec& block, std::int64_t batch, std::int64_t channels,
               std::int64_t positions, std::array<std::int64_t, 4> excite_dims, double fraction) {
  const auto hidden = block.se_hidden();
  const auto per_sample = std::max<std::int64_t>(1, positions / std::max<std::int64_t>(1, batch));
  Workload sq;
  sq.name = "se-squeeze";
  sq.kind = OperatorKind::kSe;
  sq.dims = {batch, channels, 1, 1};
  sq.window = {1, static_cast<int>(per_sample)};
  sq.reduce_channels = channels;
  sq.out_per_group = channels;
  sq.input_channels = channels;
  sq.in_bytes = channels * positions * kBytesPerElement;
  sq.weight_bytes = 2 * channels * hidden * kBytesPerElement;
  sq.out_bytes = batch * channels * kBytesPerElement;
  sq.macs = channels * positions + batch * 2 * channels * hidden;
  sq.expected_fraction = fraction;
  out.push_back(sq);
  auto ex = elementwise("se-excite", OperatorKind::kSe, excite_dims, 1);
  ex.in_bytes += batch * channels * kBytesPerElement;
  ex.macs = excite_dims[0] * excite_dims[1] * excite_dims[2] * excite_dims[3];
  ex.expected_fraction = fraction;
  out.push_back(ex);
}

std::vector<Workload> static_workloads(const BlockSpec& block, std::int64_t batch, double fraction) {
  std::vector<Workload> out;
  const auto mid = block.mid_shape();
  const auto c2 = block.conv2_output_shape();
  const auto o = block.output_shape();
  out.push_back(conv_workload("conv1", OperatorKind::kPointwiseConv, block.conv1, block.input_shape, batch));
  out.push_back(conv_workload("conv2", OperatorKind::kConv, block.conv2, mid, batch));
  if (block.se_reduction) {
    append_se(out, block, batch, c2.channels, batch * c2.height * c2.width, {batch, c2.channels, c2.height, c2.width},
              1.0);
  }
  out.push_back(conv_workload("conv3", OperatorKind::kPointwiseConv, block.conv3, c2, batch));
  for (auto& w : out) w.expected_fraction = fraction;
  if (block.has_downsample) {
    out.push_back(conv_workload("downsample", OperatorKind::kPointwiseConv, block.downsample(), block.input_shape,
                                batch));
  }
  auto add = elementwise("add", OperatorKind::kAdd, {batch, o.channels, o.height, o.width}, 2);
  add.expected_fraction = fraction;
  out.push_back(add);
  return out;
}

std::vector<Workload> spatial_workloads(const BlockSpec& block, const DynamicConfig& cfg, const ActivationProfile& prof,
                                        const FusionFlags& flags, std::int64_t batch) {
  std::vector<Workload> out;
  const auto& in = block.input_shape;
  const auto mid = block.mid_shape();
  const auto c2 = block.conv2_output_shape();
  const auto o = block.output_shape();
  const auto s = *cfg.spatial_granularity;
  const auto cells_h = c2.height / s;
  const auto cells_w = c2.width / s;
  const auto p = active_patches(block, cfg, prof.r_spatial, batch);
  const int st = block.conv2.stride;
  const std::int64_t extent = (s - 1) * st + block.conv2.kernel;

  // Masker and conv1 share the block input.
  if (flags.fuse_masker_conv1) {
    auto fused_layer = block.conv1;
    fused_layer.out_channels += 1;
    auto w = conv_workload("masker-conv1", OperatorKind::kMaskerConvFused, fused_layer, in, batch);
    out.push_back(w);
    out.push_back(pool_workload("mask-pool", batch, 1, mid.height, mid.width, cells_h, cells_w));
  } else {
    out.push_back(pool_workload("masker-pool", batch, in.channels, in.height, in.width, cells_h, cells_w));
    ConvLayerSpec logits{in.channels, 2, 1, 1, 1, false};
    out.push_back(conv_workload("masker-conv", OperatorKind::kMaskerConv, logits,
                                TensorShape{in.channels, cells_h, cells_w}, batch));
    out.push_back(conv_workload("conv1", OperatorKind::kPointwiseConv, block.conv1, in, batch));
  }

  // conv2 over gathered patches (with halo), conv3 on the dense patch batch.
  const std::int64_t full_mid = batch * mid.elements() * kBytesPerElement;
  const std::int64_t gathered = p * mid.channels * extent * extent * kBytesPerElement;
  const std::int64_t unique_in = std::min(full_mid, gathered);
  Workload conv2;
  conv2.kind = OperatorKind::kGatherConv;
  conv2.dims = {p, c2.channels, s, s};
  conv2.window = {block.conv2.kernel, block.conv2.kernel};
  conv2.stride = {st, st};
  conv2.reduce_channels = block.conv2.in_channels / block.conv2.groups;
  conv2.out_per_group = block.conv2.out_channels / block.conv2.groups;
  conv2.input_channels = block.conv2.in_channels;
  conv2.weight_bytes = block.conv2.weight_count() * kBytesPerElement;
  conv2.out_bytes = p * c2.channels * s * s * kBytesPerElement;
  conv2.macs = p * s * s * c2.channels * conv2.reduce_channels * block.conv2.kernel * block.conv2.kernel;
  if (flags.fuse_gather_conv) {
    conv2.name = "gather-conv2";
    conv2.in_bytes = unique_in;
  } else {
    auto g = elementwise("gather", OperatorKind::kGather, {p, mid.channels, extent, extent}, 1);
    g.in_bytes = unique_in;
    out.push_back(g);
    conv2.name = "conv2-patches";
    conv2.kind = OperatorKind::kConv;
    conv2.in_bytes = gathered;
  }
  out.push_back(conv2);

  if (block.se_reduction) append_se(out, block, batch, c2.channels, p * s * s, {p, c2.channels, s, s}, 1.0);

  ConvLayerSpec c3 = block.conv3;
  auto conv3 = conv_workload("conv3-patches", OperatorKind::kPointwiseConv, c3, TensorShape{c2.channels, s, s}, 1);
  conv3.dims[0] = p;
  conv3.in_bytes = p * c2.channels * s * s * kBytesPerElement;
  conv3.out_bytes = p * o.channels * s * s * kBytesPerElement;
  conv3.macs = p * s * s * c2.channels * o.channels;
  out.push_back(conv3);

  if (block.has_downsample) {
    out.push_back(conv_workload("downsample", OperatorKind::kPointwiseConv, block.downsample(), in, batch));
  }

  const std::int64_t full_out = batch * o.elements() * kBytesPerElement;
  if (flags.fuse_scatter_add) {
    out.push_back(elementwise("scatter-add", OperatorKind::kScatterAdd, {p, o.channels, s, s}, 2));
  } else {
    auto sc = elementwise("scatter", OperatorKind::kScatter, {p, o.channels, s, s}, 1);
    sc.out_bytes = full_out;  // zero-filled dense destination
    out.push_back(sc);
    out.push_back(elementwise("add", OperatorKind::kAdd, {batch, o.channels, o.height, o.width}, 2));
  }
  return out;
}

std::vector<Workload> channel_workloads(const BlockSpec& block, const DynamicConfig& cfg,
                                        const ActivationProfile& prof, std::int64_t batch) {
  std::vector<Workload> out;
  const auto& in = block.input_shape;
  const auto mid = block.mid_shape();
  const auto c2 = block.conv2_output_shape();
  const auto o = block.output_shape();
  const double r = prof.r_channel;

  out.push_back(channel_masker_workload(block, *cfg.channel_granularity, batch));

  // Masks differ between samples, so each convolution keeps its static tile
  // grid and skips inactive filters inside a tile. Kernel gathering is folded
  // in: only active filters and active input channels are moved.
  auto scaled = [](std::int64_t v, double f) { return std::llround(static_cast<double>(v) * f); };
  if (r > 0) {
    auto w1 = conv_workload("conv1", OperatorKind::kPointwiseConv, block.conv1, in, batch);
    w1.weight_bytes = scaled(w1.weight_bytes, r);
    w1.out_bytes = scaled(w1.out_bytes, r);
    w1.macs = scaled(w1.macs, r);
    out.push_back(w1);

    auto w2 = conv_workload("conv2", OperatorKind::kConv, block.conv2, mid, batch);
    w2.channel_fraction = r;
    w2.in_bytes = scaled(w2.in_bytes, r);
    w2.weight_bytes = scaled(w2.weight_bytes, r * r);
    w2.out_bytes = scaled(w2.out_bytes, r);
    w2.macs = scaled(w2.macs, r * r);
    out.push_back(w2);
  }

  if (block.se_reduction) {
    append_se(out, block, batch, c2.channels, batch * c2.height * c2.width, {batch, c2.channels, c2.height, c2.width},
              1.0);
  }

  if (r > 0) {
    auto w3 = conv_workload("conv3", OperatorKind::kPointwiseConv, block.conv3, c2, batch);
    w3.channel_fraction = r;
    w3.in_bytes = scaled(w3.in_bytes, r);
    w3.weight_bytes = scaled(w3.weight_bytes, r);
    w3.macs = scaled(w3.macs, r);
    out.push_back(w3);
  }

  if (block.has_downsample) {
    out.push_back(conv_workload("downsample", OperatorKind::kPointwiseConv, block.downsample(), in, batch));
  }
  out.push_back(elementwise("add", OperatorKind::kAdd, {batch, o.channels, o.height, o.width}, 2));
  return out;
}

std::vector<Workload> layer_workloads(const BlockSpec& block, const ActivationProfile& prof, std::int64_t batch) {
  std::vector<Workload> out;
  const auto& in = block.input_shape;
  out.push_back(pool_workload("masker-pool", batch, in.channels, in.height, in.width, 1, 1));
  ConvLayerSpec logits{in.channels, 2, 1, 1, 1, false};
  out.push_back(conv_workload("masker-conv", OperatorKind::kMaskerConv, logits, TensorShape{in.channels, 1, 1}, batch));
  for (auto& w : static_workloads(block, batch, prof.r_layer)) out.push_back(std::move(w));
  return out;
}

}  // namespace

std::string TileShape::to_string() const {
  std::ostringstream out;
  out << t_p << 'x' << t_c << 'x' << t_s1 << 'x' << t_s2;
  return out.str();
}

std::string_view to_string(OperatorKind kind) {
  switch (kind) {
    case OperatorKind::kConv: return "conv";
    case OperatorKind::kPointwiseConv: return "pointwise-conv";
    case OperatorKind::kMaskerConvFused: return "masker-conv-fused";
    case OperatorKind::kMaskerConv: return "masker-conv";
    case OperatorKind::kGatherConv: return "gather-conv";
    case OperatorKind::kGather: return "gather";
    case OperatorKind::kScatterAdd: return "scatter-add";
    case OperatorKind::kScatter: return "scatter";
    case OperatorKind::kAdd: return "add";
    case OperatorKind::kPool: return "pool";
    case OperatorKind::kChannelMaskerMlp: return "channel-masker-mlp";
    case OperatorKind::kSe: return "se";
  }
  return "?";
}

LatencyBreakdown& LatencyBreakdown::operator+=(const LatencyBreakdown& o) {
  data_s += o.data_s;
  compute_s += o.compute_s;
  const_s += o.const_s;
  total_s += o.total_s;
  return *this;
}

LatencyBreakdown LatencyBreakdown::scaled(double f) const {
  return LatencyBreakdown{data_s * f, compute_s * f, const_s * f, total_s * f};
}

std::string FusionFlags::to_string() const {
  std::string out;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += '+';
    out += name;
  };
  add(fuse_masker_conv1, "masker-conv");
  add(fuse_gather_conv, "gather-conv");
  add(fuse_scatter_add, "scatter-add");
  return out.empty() ? "none" : out;
}

std::vector<TileShape> enumerate_tile_shapes(const std::array<std::int64_t, 4>& dims) {
  for (auto d : dims) {
    if (d <= 0) throw Error(ErrorCode::kInvalidArgument, "tile enumeration needs positive dims");
  }
  const auto a = pow2_candidates(dims[0]);
  const auto b = pow2_candidates(dims[1]);
  const auto c = pow2_candidates(dims[2]);
  const auto d = pow2_candidates(dims[3]);
  std::vector<TileShape> out;
  out.reserve(a.size() * b.size() * c.size() * d.size());
  for (auto ta : a)
    for (auto tb : b)
      for (auto tc : c)
        for (auto td : d) out.push_back(TileShape{ta, tb, tc, td});
  return out;
}

std::int64_t tile_count(const std::array<std::int64_t, 4>& dims, const TileShape& tile) {
  return ceil_div(dims[0], tile.t_p) * ceil_div(dims[1], tile.t_c) * ceil_div(dims[2], tile.t_s1) *
         ceil_div(dims[3], tile.t_s2);
}

double data_latency(const Workload& w, const TileShape& tile, const HardwareSpec& hw) {
  if (w.empty()) return 0.0;
  const double off = hw.offchip_bandwidth_bytes_per_s;
  const double on = hw.onchip_bandwidth_bytes_per_s();

  const double off2on = static_cast<double>(w.in_bytes + w.weight_bytes) / off;

  const double input_tiles = static_cast<double>(w.operands) * static_cast<double>(w.dims[0]) *
                             channel_sum(w, tile.t_c) * w.channel_fraction *
                             extent_sum(w.dims[2], tile.t_s1, w.stride[0], w.window[0]) *
                             extent_sum(w.dims[3], tile.t_s2, w.stride[1], w.window[1]) * kBytes;
  const double other_tiles = static_cast<double>(tile_count(w.dims, tile) / ceil_div(w.dims[1], tile.t_c));
  const double weight_tiles = other_tiles * static_cast<double>(w.weight_bytes);
  const double global2local = (input_tiles + weight_tiles) / on;

  const double local2global = static_cast<double>(w.out_bytes) / on;
  const double on2off = static_cast<double>(w.out_bytes) / off;
  return off2on + global2local + local2global + on2off;
}

double compute_latency(const Workload& w, const TileShape& tile, const HardwareSpec& hw, const LatencyOptions& opts) {
  if (w.empty() || w.macs == 0) return 0.0;
  const auto tiles = tile_count(w.dims, tile);
  const auto waves = ceil_div(tiles, hw.pe_count);
  const double rate = static_cast<double>(hw.fp32_per_pe) * hw.frequency_hz * (opts.fma_doubling ? 2.0 : 1.0);
  // Every wave lasts as long as a full tile; edge tiles do not shorten it.
  const double outputs = static_cast<double>(w.dims[0]) * static_cast<double>(w.dims[1]) *
                         static_cast<double>(w.dims[2]) * static_cast<double>(w.dims[3]);
  const double volume = static_cast<double>(tile.t_p) * static_cast<double>(tile.t_c) *
                        static_cast<double>(tile.t_s1) * static_cast<double>(tile.t_s2);
  const double per_tile = static_cast<double>(w.macs) * volume / outputs;
  return static_cast<double>(waves) * per_tile / rate;
}

SchedulePlan evaluate_tile(const Workload& w, const TileShape& tile, const HardwareSpec& hw,
                           const LatencyOptions& opts) {
  SchedulePlan plan;
  plan.tile = tile;
  plan.tile_count = tile_count(w.dims, tile);
  plan.waves = ceil_div(plan.tile_count, hw.pe_count);
  plan.predicted.data_s = data_latency(w, tile, hw);
  plan.predicted.compute_s = compute_latency(w, tile, hw, opts);
  plan.predicted.total_s = plan.predicted.data_s + plan.predicted.compute_s;
  return plan;
}

SchedulePlan search_schedule(const Workload& w, const HardwareSpec& hw, const LatencyOptions& opts) {
  if (w.empty()) throw Error(ErrorCode::kInvalidArgument, "cannot schedule empty workload '" + w.name + "'");
  const auto candidates = enumerate_tile_shapes(w.dims);
  std::vector<SchedulePlan> results(candidates.size());
  const std::size_t workers =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::max(1, opts.threads)), 1, candidates.size());
  auto run = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) results[i] = evaluate_tile(w, candidates[i], hw, opts);
  };
  if (workers == 1) {
    run(0, candidates.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (candidates.size() + workers - 1) / workers;
    for (std::size_t t = 0; t < workers; ++t) {
      const std::size_t begin = t * chunk;
      const std::size_t end = std::min(candidates.size(), begin + chunk);
      if (begin < end) pool.emplace_back(run, begin, end);
    }
    for (auto& th : pool) th.join();
  }
  const SchedulePlan* best = &results.front();
  for (const auto& r : results) {
    if (r.predicted.total_s < best->predicted.total_s ||
        (r.predicted.total_s == best->predicted.total_s && r.tile < best->tile)) {
      best = &r;
    }
  }
  return *best;
}

std::int64_t active_patches(const BlockSpec& block, const DynamicConfig& cfg, double r_spatial, std::int64_t batch) {
  const auto cells = coarse_cells(block, cfg);
  return std::llround(r_spatial * static_cast<double>(cells) * static_cast<double>(batch));
}

Workload channel_masker_workload(const BlockSpec& block, std::int64_t granularity, std::int64_t batch,
                                 ChannelMaskerDesign design) {
  const auto& in = block.input_shape;
  const auto d = block.conv2.out_channels / granularity;
  Workload w;
  w.name = design == ChannelMaskerDesign::kTwoLayerMlp ? "channel-masker" : "channel-masker-linear";
  w.kind = OperatorKind::kChannelMaskerMlp;
  w.dims = {batch, 2 * d, 1, 1};
  w.window = {static_cast<int>(in.height), static_cast<int>(in.width)};
  w.reduce_channels = in.channels;
  w.out_per_group = 2 * d;
  w.input_channels = in.channels;
  std::int64_t params = 0;
  if (design == ChannelMaskerDesign::kTwoLayerMlp) {
    const auto h = channel_masker_hidden(d);
    params = in.channels * h + h * 2 * d;
  } else {
    params = in.channels * 2 * d;
  }
  w.in_bytes = batch * in.elements() * kBytesPerElement;
  w.weight_bytes = params * kBytesPerElement;
  w.out_bytes = batch * 2 * d * kBytesPerElement;
  w.macs = batch * (in.elements() + params);
  return w;
}

std::vector<Workload> block_workloads(const BlockSpec& block, const DynamicConfig& cfg, const ActivationProfile& prof,
                                      const FusionFlags& flags, std::int64_t batch) {
  block.validate();
  validate_config(block, cfg);
  prof.validate();
  if (batch < 1) throw Error(ErrorCode::kInvalidArgument, "batch must be >= 1");
  switch (cfg.paradigm) {
    case Paradigm::kSpatial: return spatial_workloads(block, cfg, prof, flags, batch);
    case Paradigm::kChannel: return channel_workloads(block, cfg, prof, batch);
    case Paradigm::kLayer: return layer_workloads(block, prof, batch);
    case Paradigm::kStatic: return static_workloads(block, batch, 1.0);
  }
  return {};
}

const WorkloadPlan* BlockPrediction::dominant() const {
  const WorkloadPlan* best = nullptr;
  for (const auto& wp : workloads) {
    if (!wp.plan) continue;
    if (best == nullptr || wp.contribution.total_s > best->contribution.total_s) best = &wp;
  }
  return best;
}

LatencyBreakdown predict_workloads(const std::vector<Workload>& workloads, const HardwareSpec& hw,
                                   const LatencyOptions& opts, std::vector<WorkloadPlan>* plans) {
  hw.validate();
  LatencyBreakdown total;
  for (const auto& w : workloads) {
    WorkloadPlan wp{w, std::nullopt, {}};
    if (!w.empty() && w.expected_fraction > 0) {
      wp.plan = search_schedule(w, hw, opts);
      wp.contribution = wp.plan->predicted.scaled(w.expected_fraction);
      total += wp.contribution;
    }
    if (plans) plans->push_back(std::move(wp));
  }
  total.const_s = hw.const_overhead_s;
  total.total_s = total.data_s + total.compute_s + total.const_s;
  return total;
}

BlockPrediction predict_block(const BlockSpec& block, const DynamicConfig& cfg, const ActivationProfile& prof,
                              const FusionFlags& flags, const HardwareSpec& hw, std::int64_t batch,
                              const LatencyOptions& opts) {
  BlockPrediction pred;
  pred.latency = predict_workloads(block_workloads(block, cfg, prof, flags, batch), hw, opts, &pred.workloads);
  if (cfg.paradigm == Paradigm::kStatic) {
    pred.static_latency = pred.latency;
  } else {
    pred.static_latency =
        predict_workloads(block_workloads(block, DynamicConfig::fixed(), prof, flags, batch), hw, opts);
  }
  if (pred.static_latency.total_s <= 0) throw Error(ErrorCode::kDivisionByZero, "static latency is zero");
  pred.r_ell = pred.latency.total_s / pred.static_latency.total_s;
  return pred;
}

std::vector<FusionAblationRow> ablate_fusion(const BlockSpec& block, const DynamicConfig& cfg,
                                             const ActivationProfile& prof, const HardwareSpec& hw,
                                             std::int64_t batch, const LatencyOptions& opts) {
  std::vector<FusionAblationRow> rows;
  for (unsigned bits = 0; bits < 8; ++bits) {
    const auto flags = FusionFlags::from_bits(bits);
    rows.push_back({flags, predict_workloads(block_workloads(block, cfg, prof, flags, batch), hw, opts)});
  }
  return rows;
}

std::string prediction_csv_header() {
  return "device,block_id,paradigm,S,G,r,batch,tile,waves,data_us,compute_us,total_us,r_ell";
}

std::string prediction_csv_row(const HardwareSpec& hw, const std::string& block_id, const DynamicConfig& cfg,
                               double rate, std::int64_t batch, const BlockPrediction& pred) {
  using kv::format_double;
  std::ostringstream out;
  const auto* dom = pred.dominant();
  out << hw.name << ',' << block_id << ',' << to_string(cfg.paradigm) << ','
      << (cfg.spatial_granularity ? std::to_string(*cfg.spatial_granularity) : "") << ','
      << (cfg.channel_granularity ? std::to_string(*cfg.channel_granularity) : "") << ',' << format_double(rate)
      << ',' << batch << ',' << (dom ? dom->plan->tile.to_string() : "") << ','
      << (dom ? std::to_string(dom->plan->waves) : "") << ',' << format_double(pred.latency.data_s * 1e6) << ','
      << format_double(pred.latency.compute_s * 1e6) << ',' << format_double(pred.latency.total_s * 1e6) << ','
      << format_double(pred.r_ell);
  return out.str();
}

}  // namespace dynlat

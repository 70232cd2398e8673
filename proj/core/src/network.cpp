#include "dynlat/network.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "dynlat/error.hpp"
#include "dynlat/kv.hpp"

namespace dynlat {

// Defined in the generated embedded_archs.cpp.
namespace embedded {
extern const std::map<std::string, std::string_view>& architectures();
}

namespace {

TensorShape parse_shape(std::string_view text) {
  // CxHxW
  std::vector<std::int64_t> dims;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('x', pos);
    if (end == std::string_view::npos) end = text.size();
    dims.push_back(kv::to_int(text.substr(pos, end - pos), "input"));
    pos = end + 1;
  }
  if (dims.size() != 3) throw Error(ErrorCode::kParseError, "input must be CxHxW, got '" + std::string(text) + "'");
  return TensorShape{dims[0], dims[1], dims[2]};
}

TensorShape max_pool_output(const TensorShape& in) {
  return TensorShape{in.channels, (in.height + 2 - 3) / 2 + 1, (in.width + 2 - 3) / 2 + 1};
}

Workload dense_conv(std::string name, const ConvLayerSpec& layer, const TensorShape& in, std::int64_t batch) {
  const auto out = layer.output_shape(in);
  Workload w;
  w.name = std::move(name);
  w.kind = OperatorKind::kConv;
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

}  // namespace

std::vector<BlockSpec> NetworkSpec::blocks() const {
  std::vector<BlockSpec> out;
  for (const auto& st : stages) {
    out.push_back(st.first_block);
    for (std::int64_t i = 1; i < st.block_count; ++i) out.push_back(st.block_template);
  }
  return out;
}

std::size_t NetworkSpec::block_count() const {
  std::size_t n = 0;
  for (const auto& st : stages) n += static_cast<std::size_t>(st.block_count);
  return n;
}

std::vector<std::pair<std::size_t, std::size_t>> NetworkSpec::block_positions() const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    for (std::int64_t b = 0; b < stages[s].block_count; ++b) out.emplace_back(s, static_cast<std::size_t>(b));
  }
  return out;
}

TensorShape NetworkSpec::stem_output_shape() const {
  auto out = stem.conv.output_shape(input_shape);
  return stem.max_pool ? max_pool_output(out) : out;
}

std::int64_t NetworkSpec::stem_macs() const { return conv_macs(stem.conv, stem.conv.output_shape(input_shape)); }

std::int64_t NetworkSpec::classifier_macs() const {
  return include_classifier ? classifier_features * num_classes : 0;
}

std::int64_t NetworkSpec::static_macs() const {
  std::int64_t total = stem_macs() + classifier_macs();
  for (const auto& b : blocks()) total += static_cast<std::int64_t>(block_flops_static(b).total());
  return total;
}

Architecture parse_architecture(std::string_view text) {
  const auto doc = kv::parse(text);
  const auto& p = doc.preamble;
  Architecture a;
  a.name = p.require("name");
  if (auto v = p.find("input")) a.input = parse_shape(*v);
  if (auto v = p.find("stem_width")) a.stem_width = kv::to_int(*v, "stem_width");
  if (auto v = p.find("stem_kernel")) a.stem_kernel = static_cast<int>(kv::to_int(*v, "stem_kernel"));
  if (auto v = p.find("stem_stride")) a.stem_stride = static_cast<int>(kv::to_int(*v, "stem_stride"));
  if (auto v = p.find("stem_pool")) a.stem_pool = kv::to_bool(*v, "stem_pool");
  if (auto v = p.find("num_classes")) a.num_classes = kv::to_int(*v, "num_classes");
  for (const auto& s : doc.sections) {
    if (s.name != "stage") throw Error(ErrorCode::kParseError, "unexpected section [" + s.name + "]");
    ArchStage st;
    st.depth = kv::to_int(s.require("depth"), "depth");
    st.width = kv::to_int(s.require("width"), "width");
    if (auto v = s.find("bottleneck_ratio")) st.bottleneck_ratio = kv::to_int(*v, "bottleneck_ratio");
    if (auto v = s.find("groups")) st.groups = kv::to_int(*v, "groups");
    if (auto v = s.find("se_reduction")) st.se_reduction = kv::to_int(*v, "se_reduction");
    if (auto v = s.find("stride")) st.stride = static_cast<int>(kv::to_int(*v, "stride"));
    if (st.depth < 1) throw Error(ErrorCode::kParseError, "stage depth must be >= 1");
    if (st.bottleneck_ratio < 1 || st.width % st.bottleneck_ratio != 0) {
      throw Error(ErrorCode::kParseError, "stage width must be divisible by its bottleneck ratio");
    }
    a.stages.push_back(st);
  }
  if (a.stages.empty()) throw Error(ErrorCode::kParseError, "architecture '" + a.name + "' has no stages");
  return a;
}

NetworkSpec instantiate(const Architecture& arch, std::optional<TensorShape> input) {
  NetworkSpec net;
  net.name = arch.name;
  net.input_shape = input.value_or(arch.input);
  net.input_shape.validate();
  net.stem.conv = ConvLayerSpec{net.input_shape.channels, arch.stem_width, arch.stem_kernel, arch.stem_stride, 1, false};
  net.stem.conv.validate();
  net.stem.max_pool = arch.stem_pool;
  net.num_classes = arch.num_classes;

  TensorShape shape = net.stem_output_shape();
  for (const auto& st : arch.stages) {
    StageSpec stage;
    stage.block_count = st.depth;
    stage.stride_first = st.stride != 1;
    const auto inner = st.width / st.bottleneck_ratio;
    stage.first_block = make_bottleneck(shape, inner, st.width, st.stride, st.groups, st.se_reduction);
    shape = stage.first_block.output_shape();
    stage.block_template =
        st.depth > 1 ? make_bottleneck(shape, inner, st.width, 1, st.groups, st.se_reduction) : stage.first_block;
    net.stages.push_back(stage);
  }
  net.classifier_features = shape.channels;

  // Chaining check: each block consumes its predecessor's output.
  TensorShape expect = net.stem_output_shape();
  for (const auto& b : net.blocks()) {
    if (!(b.input_shape == expect)) throw Error(ErrorCode::kShapeMismatch, "block chaining broken in " + net.name);
    expect = b.output_shape();
  }
  return net;
}

std::vector<std::string> network_names() {
  std::vector<std::string> out;
  for (const auto& [name, text] : embedded::architectures()) out.push_back(name);
  return out;
}

std::string_view shipped_architecture_text(std::string_view name) {
  const auto& archs = embedded::architectures();
  const auto it = archs.find(std::string(name));
  if (it == archs.end()) throw Error(ErrorCode::kUnknownNetwork, "unknown network '" + std::string(name) + "'");
  return it->second;
}

NetworkSpec build_network(std::string_view name_or_path, std::optional<TensorShape> input) {
  std::string key(name_or_path);
  std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return std::tolower(c); });
  const auto& archs = embedded::architectures();
  if (auto it = archs.find(key); it != archs.end()) return instantiate(parse_architecture(it->second), input);
  std::error_code ec;
  if (std::filesystem::is_regular_file(std::string(name_or_path), ec)) {
    std::ostringstream text;
    std::ifstream in{std::string(name_or_path)};
    text << in.rdbuf();
    return instantiate(parse_architecture(text.str()), input);
  }
  throw Error(ErrorCode::kUnknownNetwork, "unknown network '" + std::string(name_or_path) + "'");
}

std::string GranularityPlan::to_string() const {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += '-';
    out += std::to_string(values[i]);
  }
  return out;
}

GranularityPlan parse_plan(std::string_view text, const NetworkSpec& net, Paradigm paradigm) {
  if (paradigm != Paradigm::kSpatial && paradigm != Paradigm::kChannel) {
    throw Error(ErrorCode::kInvalidArgument, "plans apply to the spatial and channel paradigms only");
  }
  GranularityPlan plan{paradigm, {}};
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('-', pos);
    if (end == std::string_view::npos) end = text.size();
    const auto v = kv::to_int(text.substr(pos, end - pos), "plan");
    if (v < 1) throw Error(ErrorCode::kGranularityMismatch, "plan entries must be positive");
    plan.values.push_back(v);
    pos = end + 1;
  }
  if (plan.values.size() != net.stages.size()) {
    throw Error(ErrorCode::kPlanLengthMismatch, "plan '" + std::string(text) + "' has " +
                                                    std::to_string(plan.values.size()) + " entries, network has " +
                                                    std::to_string(net.stages.size()) + " stages");
  }
  for (std::size_t s = 0; s < net.stages.size(); ++s) {
    const auto v = plan.values[s];
    const auto cfg = paradigm == Paradigm::kSpatial ? DynamicConfig::spatial(v) : DynamicConfig::channel(v);
    // Every block of a stage shares the output resolution and width.
    validate_config(net.stages[s].first_block, cfg);
    validate_config(net.stages[s].block_template, cfg);
  }
  return plan;
}

std::vector<DynamicConfig> block_configs(const NetworkSpec& net, Paradigm paradigm,
                                         const std::optional<GranularityPlan>& plan) {
  std::vector<DynamicConfig> out;
  for (const auto& [stage, block] : net.block_positions()) {
    switch (paradigm) {
      case Paradigm::kSpatial:
      case Paradigm::kChannel: {
        if (!plan) throw Error(ErrorCode::kParadigmFieldMissing, "paradigm requires a granularity plan");
        if (plan->values.size() != net.stages.size()) {
          throw Error(ErrorCode::kPlanLengthMismatch, "plan length does not match the stage count");
        }
        const auto v = plan->values[stage];
        out.push_back(paradigm == Paradigm::kSpatial ? DynamicConfig::spatial(v) : DynamicConfig::channel(v));
        break;
      }
      case Paradigm::kLayer: out.push_back(DynamicConfig::layer()); break;
      case Paradigm::kStatic: out.push_back(DynamicConfig::fixed()); break;
    }
  }
  return out;
}

std::vector<Workload> stem_workloads(const NetworkSpec& net, std::int64_t batch) {
  std::vector<Workload> out;
  out.push_back(dense_conv("stem-conv", net.stem.conv, net.input_shape, batch));
  if (net.stem.max_pool) {
    const auto in = net.stem.conv.output_shape(net.input_shape);
    const auto o = max_pool_output(in);
    Workload w;
    w.name = "stem-pool";
    w.kind = OperatorKind::kPool;
    w.dims = {batch, o.channels, o.height, o.width};
    w.window = {3, 3};
    w.stride = {2, 2};
    w.input_channels = o.channels;
    w.in_bytes = batch * in.elements() * kBytesPerElement;
    w.out_bytes = batch * o.elements() * kBytesPerElement;
    w.macs = batch * o.elements() * 9;
    out.push_back(w);
  }
  return out;
}

std::vector<Workload> classifier_workloads(const NetworkSpec& net, std::int64_t batch) {
  std::vector<Workload> out;
  if (!net.include_classifier) return out;
  const auto last = net.stages.empty() ? net.stem_output_shape() : net.stages.back().block_template.output_shape();
  Workload pool;
  pool.name = "global-pool";
  pool.kind = OperatorKind::kPool;
  pool.dims = {batch, last.channels, 1, 1};
  pool.window = {static_cast<int>(last.height), static_cast<int>(last.width)};
  pool.input_channels = last.channels;
  pool.in_bytes = batch * last.elements() * kBytesPerElement;
  pool.out_bytes = batch * last.channels * kBytesPerElement;
  pool.macs = batch * last.elements();
  out.push_back(pool);
  ConvLayerSpec fc{net.classifier_features, net.num_classes, 1, 1, 1, false};
  auto w = dense_conv("fc", fc, TensorShape{net.classifier_features, 1, 1}, batch);
  out.push_back(w);
  return out;
}

NetworkPrediction predict_network(const NetworkSpec& net, Paradigm paradigm,
                                  const std::optional<GranularityPlan>& plan, const std::vector<double>& rates,
                                  const HardwareSpec& hw, std::int64_t batch, const FusionFlags& flags,
                                  const LatencyOptions& opts) {
  const auto blocks = net.blocks();
  if (rates.size() != 1 && rates.size() != blocks.size()) {
    throw Error(ErrorCode::kProfileCountMismatch, "expected 1 or " + std::to_string(blocks.size()) +
                                                      " rates, got " + std::to_string(rates.size()));
  }
  const auto configs = block_configs(net, paradigm, plan);
  std::vector<ActivationProfile> profiles;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    profiles.push_back(ActivationProfile::uniform(rates.size() == 1 ? rates.front() : rates[i]));
  }

  NetworkPrediction out;
  out.flops = network_flops(net, configs, profiles);
  out.stem = predict_workloads(stem_workloads(net, batch), hw, opts);
  out.classifier = predict_workloads(classifier_workloads(net, batch), hw, opts);
  out.total = out.stem;
  out.total += out.classifier;
  out.static_total = out.total;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    out.blocks.push_back(predict_block(blocks[i], configs[i], profiles[i], flags, hw, batch, opts));
    out.total += out.blocks.back().latency;
    out.static_total += out.blocks.back().static_latency;
  }
  out.r_ell = out.total.total_s / out.static_total.total_s;
  out.per_image_s = out.total.total_s / static_cast<double>(batch);
  return out;
}

std::vector<SweepRow> sweep(const SweepRequest& req) {
  if (req.rates.empty()) throw Error(ErrorCode::kInvalidArgument, "sweep needs a nonempty rate grid");
  auto rates = req.rates;
  std::sort(rates.begin(), rates.end());
  const bool uses_granularity = req.paradigm == Paradigm::kSpatial || req.paradigm == Paradigm::kChannel;
  std::vector<SweepRow> rows;

  auto base_row = [&]() {
    SweepRow row;
    row.net = req.net.name;
    row.device = req.hw.name;
    row.paradigm = req.paradigm;
    row.batch = req.batch;
    return row;
  };

  if (req.stage) {
    if (*req.stage < 1 || *req.stage > req.net.stages.size()) {
      throw Error(ErrorCode::kInvalidArgument, "stage out of range");
    }
    const auto& st = req.net.stages[*req.stage - 1];
    if (req.block >= static_cast<std::size_t>(st.block_count)) {
      throw Error(ErrorCode::kInvalidArgument, "block index out of range");
    }
    const auto& block = req.block == 0 ? st.first_block : st.block_template;
    std::vector<std::int64_t> grid = req.granularities;
    if (!uses_granularity) grid = {0};
    if (grid.empty()) throw Error(ErrorCode::kInvalidArgument, "sweep needs a nonempty granularity grid");
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    for (const auto g : grid) {
      DynamicConfig cfg = DynamicConfig::fixed();
      if (req.paradigm == Paradigm::kSpatial) cfg = DynamicConfig::spatial(g);
      if (req.paradigm == Paradigm::kChannel) cfg = DynamicConfig::channel(g);
      if (req.paradigm == Paradigm::kLayer) cfg = DynamicConfig::layer();
      validate_config(block, cfg);
      const auto stat_flops = block_flops_static(block);
      for (const double r : rates) {
        const auto prof = ActivationProfile::uniform(r);
        const auto pred = predict_block(block, cfg, prof, req.flags, req.hw, req.batch, req.options);
        auto row = base_row();
        row.stage = std::to_string(*req.stage);
        row.block = std::to_string(req.block + 1);
        if (req.paradigm == Paradigm::kSpatial) row.s = std::to_string(g);
        if (req.paradigm == Paradigm::kChannel) row.g = std::to_string(g);
        row.r = r;
        row.flops_ratio = block_flops_dynamic(block, cfg, prof).total() / stat_flops.total();
        row.r_ell = pred.r_ell;
        row.total_us = pred.latency.total_s * 1e6;
        rows.push_back(row);
      }
    }
    return rows;
  }

  std::vector<std::optional<GranularityPlan>> plans;
  if (uses_granularity) {
    if (req.plans.empty()) throw Error(ErrorCode::kInvalidArgument, "sweep needs a nonempty plan grid");
    auto sorted = req.plans;
    std::sort(sorted.begin(), sorted.end(),
              [](const GranularityPlan& a, const GranularityPlan& b) { return a.values < b.values; });
    for (auto& p : sorted) plans.emplace_back(p);
  } else {
    plans.emplace_back(std::nullopt);
  }
  for (const auto& plan : plans) {
    for (const double r : rates) {
      const auto pred = predict_network(req.net, req.paradigm, plan, {r}, req.hw, req.batch, req.flags, req.options);
      auto row = base_row();
      row.stage = "all";
      row.block = "all";
      if (plan && req.paradigm == Paradigm::kSpatial) row.s = plan->to_string();
      if (plan && req.paradigm == Paradigm::kChannel) row.g = plan->to_string();
      row.r = r;
      row.flops_ratio = pred.flops.ratio;
      row.r_ell = pred.r_ell;
      row.total_us = pred.total.total_s * 1e6;
      rows.push_back(row);
    }
  }
  return rows;
}

std::string sweep_csv_header() { return "net,device,paradigm,stage,block,S,G,r,batch,flops_ratio,r_ell,total_us"; }

std::string sweep_csv_row(const SweepRow& row) {
  using kv::format_double;
  std::ostringstream out;
  out << row.net << ',' << row.device << ',' << to_string(row.paradigm) << ',' << row.stage << ',' << row.block << ','
      << row.s << ',' << row.g << ',' << format_double(row.r) << ',' << row.batch << ','
      << format_double(row.flops_ratio) << ',' << format_double(row.r_ell) << ',' << format_double(row.total_us);
  return out.str();
}

}  // namespace dynlat

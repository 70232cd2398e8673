#include "dynlat/core_model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "dynlat/error.hpp"
#include "dynlat/kv.hpp"

namespace dynlat {
namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

void require(bool ok, ErrorCode code, const std::string& msg) {
  if (!ok) throw Error(code, msg);
}

HardwareSpec preset(std::string name, std::int64_t pes, std::int64_t lanes, double mhz, double gbps) {
  HardwareSpec hw;
  hw.name = std::move(name);
  hw.pe_count = pes;
  hw.fp32_per_pe = lanes;
  hw.frequency_hz = mhz * 1e6;
  hw.offchip_bandwidth_bytes_per_s = gbps * 1e9;
  return hw;
}

// Writes `value / scale` under `scaled_key` when that survives a round trip,
// otherwise the raw SI value under `raw_key`.
void emit_scaled(std::ostringstream& out, double value, double scale, const char* scaled_key, const char* raw_key) {
  const double scaled = value / scale;
  const std::string text = kv::format_double(scaled);
  if (kv::to_double(text, scaled_key) * scale == value) {
    out << scaled_key << " = " << text << "\n";
  } else {
    out << raw_key << " = " << kv::format_double(value) << "\n";
  }
}

double read_scaled(const kv::Section& s, const char* scaled_key, double scale, const char* raw_key) {
  if (auto v = s.find(raw_key)) return kv::to_double(*v, raw_key);
  return kv::to_double(s.require(scaled_key), scaled_key) * scale;
}

HardwareSpec hardware_from_section(const kv::Section& s) {
  HardwareSpec hw;
  hw.name = s.find("name").value_or(s.name);
  hw.pe_count = kv::to_int(s.require("pe_count"), "pe_count");
  hw.fp32_per_pe = kv::to_int(s.require("fp32_per_pe"), "fp32_per_pe");
  hw.frequency_hz = read_scaled(s, "frequency_mhz", 1e6, "frequency_hz");
  hw.offchip_bandwidth_bytes_per_s = read_scaled(s, "bandwidth_g", 1e9, "bandwidth_bytes_per_s");
  if (auto v = s.find("onchip_bandwidth_factor")) hw.onchip_bandwidth_factor = kv::to_double(*v, "onchip_bandwidth_factor");
  if (auto v = s.find("movement_efficiency")) hw.movement_efficiency = kv::to_double(*v, "movement_efficiency");
  if (s.has("const_overhead_s") || s.has("const_overhead_us")) {
    hw.const_overhead_s = read_scaled(s, "const_overhead_us", 1e-6, "const_overhead_s");
  }
  hw.validate();
  return hw;
}

}  // namespace

void HardwareSpec::validate() const {
  require(pe_count > 0, ErrorCode::kInvalidArgument, "pe_count must be positive");
  require(fp32_per_pe > 0, ErrorCode::kInvalidArgument, "fp32_per_pe must be positive");
  require(frequency_hz > 0, ErrorCode::kInvalidArgument, "frequency must be positive");
  require(offchip_bandwidth_bytes_per_s > 0, ErrorCode::kInvalidArgument, "bandwidth must be positive");
  require(onchip_bandwidth_factor > 0, ErrorCode::kInvalidArgument, "onchip_bandwidth_factor must be positive");
  require(movement_efficiency > 0 && movement_efficiency <= 1, ErrorCode::kInvalidArgument,
          "movement_efficiency must lie in (0, 1]");
  require(const_overhead_s >= 0, ErrorCode::kInvalidArgument, "const_overhead must be nonnegative");
}

std::vector<HardwareSpec> hardware_presets() {
  return {
      preset("V100", 80, 64, 1500, 700),
      preset("RTX3090", 82, 128, 1695, 936),
      preset("RTX3060", 28, 128, 1777, 360),
      preset("TX2", 2, 128, 1300, 59.7),
      preset("Nano", 1, 128, 921, 25.6),
  };
}

HardwareSpec load_hardware(std::string_view name_or_path) {
  const std::string key = lower(name_or_path);
  for (auto& hw : hardware_presets()) {
    if (lower(hw.name) == key) return hw;
  }
  std::error_code ec;
  if (std::filesystem::is_regular_file(std::string(name_or_path), ec)) {
    auto doc = kv::parse_file(std::string(name_or_path));
    if (!doc.sections.empty()) return hardware_from_section(doc.sections.front());
    if (!doc.preamble.entries.empty()) return hardware_from_section(doc.preamble);
    throw Error(ErrorCode::kParseError, "no device in '" + std::string(name_or_path) + "'");
  }
  throw Error(ErrorCode::kUnknownDevice, "unknown device '" + std::string(name_or_path) + "'");
}

std::vector<HardwareSpec> parse_hardware(std::string_view text) {
  const auto doc = kv::parse(text);
  std::vector<HardwareSpec> out;
  if (!doc.preamble.entries.empty()) out.push_back(hardware_from_section(doc.preamble));
  for (const auto& s : doc.sections) out.push_back(hardware_from_section(s));
  return out;
}

std::string serialize_hardware(const HardwareSpec& hw) {
  std::ostringstream out;
  out << "[" << hw.name << "]\n";
  out << "pe_count = " << hw.pe_count << "\n";
  out << "fp32_per_pe = " << hw.fp32_per_pe << "\n";
  emit_scaled(out, hw.frequency_hz, 1e6, "frequency_mhz", "frequency_hz");
  emit_scaled(out, hw.offchip_bandwidth_bytes_per_s, 1e9, "bandwidth_g", "bandwidth_bytes_per_s");
  out << "onchip_bandwidth_factor = " << kv::format_double(hw.onchip_bandwidth_factor) << "\n";
  out << "movement_efficiency = " << kv::format_double(hw.movement_efficiency) << "\n";
  emit_scaled(out, hw.const_overhead_s, 1e-6, "const_overhead_us", "const_overhead_s");
  return out.str();
}

void TensorShape::validate() const {
  require(channels >= 1 && height >= 1 && width >= 1, ErrorCode::kShapeMismatch,
          "tensor dims must be >= 1, got " + std::to_string(channels) + "x" + std::to_string(height) + "x" +
              std::to_string(width));
}

void ConvLayerSpec::validate() const {
  require(in_channels > 0 && out_channels > 0, ErrorCode::kShapeMismatch, "channel counts must be positive");
  require(kernel > 0 && kernel % 2 == 1, ErrorCode::kShapeMismatch, "kernel must be a positive odd integer");
  require(stride == 1 || stride == 2, ErrorCode::kShapeMismatch, "stride must be 1 or 2");
  require(groups > 0 && in_channels % groups == 0 && out_channels % groups == 0, ErrorCode::kShapeMismatch,
          "channels must be divisible by groups");
}

TensorShape ConvLayerSpec::output_shape(const TensorShape& input) const {
  if (input.channels != in_channels) {
    throw Error(ErrorCode::kShapeMismatch, "conv expects " + std::to_string(in_channels) + " input channels, got " +
                                               std::to_string(input.channels));
  }
  const int pad = kernel / 2;
  return TensorShape{out_channels, (input.height + 2 * pad - kernel) / stride + 1,
                     (input.width + 2 * pad - kernel) / stride + 1};
}

void BlockSpec::validate() const {
  input_shape.validate();
  conv1.validate();
  conv2.validate();
  conv3.validate();
  require(conv1.kernel == 1 && conv3.kernel == 1, ErrorCode::kShapeMismatch, "conv1/conv3 must be 1x1");
  require(conv2.kernel == 3, ErrorCode::kShapeMismatch, "conv2 must be 3x3");
  require(conv1.stride == 1 && conv3.stride == 1, ErrorCode::kShapeMismatch, "only conv2 may be strided");
  require(conv1.in_channels == input_shape.channels, ErrorCode::kShapeMismatch, "conv1 input width mismatch");
  require(conv1.out_channels == conv2.in_channels && conv2.out_channels == conv3.in_channels,
          ErrorCode::kShapeMismatch, "bottleneck channel chaining is inconsistent");
  if (!has_downsample) {
    require(input_shape.channels == conv3.out_channels && conv2.stride == 1, ErrorCode::kShapeMismatch,
            "identity shortcut requires equal widths and stride 1");
  }
  if (se_reduction) require(*se_reduction > 0, ErrorCode::kInvalidArgument, "se_reduction must be positive");
}

ConvLayerSpec BlockSpec::downsample() const {
  return ConvLayerSpec{input_shape.channels, conv3.out_channels, 1, conv2.stride, 1, false};
}

std::int64_t BlockSpec::se_hidden() const {
  if (!se_reduction) return 0;
  return std::max<std::int64_t>(1, input_shape.channels / *se_reduction);
}

BlockSpec make_bottleneck(TensorShape input, std::int64_t width, std::int64_t out_channels, int stride,
                          std::int64_t groups, std::optional<std::int64_t> se_reduction) {
  BlockSpec b;
  b.input_shape = input;
  b.conv1 = ConvLayerSpec{input.channels, width, 1, 1, 1, false};
  b.conv2 = ConvLayerSpec{width, width, 3, stride, groups, false};
  b.conv3 = ConvLayerSpec{width, out_channels, 1, 1, 1, false};
  b.se_reduction = se_reduction;
  b.has_downsample = stride != 1 || input.channels != out_channels;
  b.validate();
  return b;
}

std::string_view to_string(Paradigm p) {
  switch (p) {
    case Paradigm::kSpatial: return "spatial";
    case Paradigm::kChannel: return "channel";
    case Paradigm::kLayer: return "layer";
    case Paradigm::kStatic: return "static";
  }
  return "?";
}

Paradigm parse_paradigm(std::string_view text) {
  const auto t = lower(text);
  if (t == "spatial") return Paradigm::kSpatial;
  if (t == "channel") return Paradigm::kChannel;
  if (t == "layer") return Paradigm::kLayer;
  if (t == "static") return Paradigm::kStatic;
  throw Error(ErrorCode::kInvalidArgument, "unknown paradigm '" + std::string(text) + "'");
}

void ActivationProfile::validate() const {
  auto in_unit = [](double r) { return r >= 0.0 && r <= 1.0; };
  require(in_unit(r_spatial) && in_unit(r_channel) && in_unit(r_layer), ErrorCode::kInvalidArgument,
          "activation rates must lie in [0, 1]");
  if (r_spatial_dilated) {
    require(in_unit(*r_spatial_dilated), ErrorCode::kInvalidArgument, "dilated rate must lie in [0, 1]");
    require(*r_spatial_dilated >= r_spatial, ErrorCode::kInvalidArgument, "dilated rate must be >= spatial rate");
  }
}

ActivationProfile ActivationProfile::uniform(double r) {
  ActivationProfile p;
  p.r_spatial = r;
  p.r_channel = r;
  p.r_layer = r;
  return p;
}

std::vector<std::int64_t> enumerate_granularities(std::int64_t feature_size) {
  std::vector<std::int64_t> small, large;
  for (std::int64_t d = 1; d * d <= feature_size; ++d) {
    if (feature_size % d != 0) continue;
    small.push_back(d);
    if (d != feature_size / d) large.push_back(feature_size / d);
  }
  small.insert(small.end(), large.rbegin(), large.rend());
  return small;
}

DynamicConfig validate_config(const BlockSpec& block, const DynamicConfig& cfg) {
  switch (cfg.paradigm) {
    case Paradigm::kSpatial: {
      require(cfg.spatial_granularity.has_value(), ErrorCode::kParadigmFieldMissing,
              "spatial paradigm requires a spatial granularity S");
      const auto s = *cfg.spatial_granularity;
      const auto out = block.conv2_output_shape();
      require(s > 0 && out.height % s == 0 && out.width % s == 0, ErrorCode::kGranularityMismatch,
              "S=" + std::to_string(s) + " must divide the " + std::to_string(out.height) + "x" +
                  std::to_string(out.width) + " output feature (valid S are its divisors)");
      break;
    }
    case Paradigm::kChannel: {
      require(cfg.channel_granularity.has_value(), ErrorCode::kParadigmFieldMissing,
              "channel paradigm requires a channel granularity G");
      const auto g = *cfg.channel_granularity;
      const auto width = block.conv2.out_channels;
      require(g > 0 && width % g == 0, ErrorCode::kGranularityMismatch,
              "G=" + std::to_string(g) + " must divide the 3x3 conv width " + std::to_string(width));
      require(block.conv2.in_channels == block.conv2.out_channels, ErrorCode::kShapeMismatch,
              "channel skipping masks conv2 input and output with one mask; widths must match");
      break;
    }
    case Paradigm::kLayer:
    case Paradigm::kStatic:
      break;
  }
  return cfg;
}

std::int64_t coarse_cells(const BlockSpec& block, const DynamicConfig& cfg) {
  switch (cfg.paradigm) {
    case Paradigm::kSpatial: {
      const auto s = cfg.spatial_granularity.value_or(1);
      const auto out = block.conv2_output_shape();
      return (out.height / s) * (out.width / s);
    }
    case Paradigm::kLayer: return 1;
    default: return 0;
  }
}

}  // namespace dynlat

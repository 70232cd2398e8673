#pragma once

// Shared domain types: modeled hardware, bottleneck blocks, dynamic
// configuration (paradigm + granularity) and activation rates.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace dynlat {

// Element size used for every traffic estimate (single precision).
inline constexpr std::int64_t kBytesPerElement = 4;

/// Multi-PE device description. Files use MHz and decimal gigabytes per
/// second; the struct stores Hz and bytes/s.
struct HardwareSpec {
  std::string name;
  std::int64_t pe_count = 1;
  std::int64_t fp32_per_pe = 1;
  double frequency_hz = 1.0;
  double offchip_bandwidth_bytes_per_s = 1.0;
  // Global-to-local bandwidth is offchip bandwidth times this factor.
  double onchip_bandwidth_factor = 10.0;
  double movement_efficiency = 1.0;
  double const_overhead_s = 0.0;

  void validate() const;
  double onchip_bandwidth_bytes_per_s() const {
    return offchip_bandwidth_bytes_per_s * onchip_bandwidth_factor * movement_efficiency;
  }

  friend bool operator==(const HardwareSpec&, const HardwareSpec&) = default;
};

std::vector<HardwareSpec> hardware_presets();

/// Resolves a preset name (case-insensitive, e.g. "V100", "nano") or the path
/// of a device file. A file with several sections yields its first device.
HardwareSpec load_hardware(std::string_view name_or_path);

std::vector<HardwareSpec> parse_hardware(std::string_view text);
std::string serialize_hardware(const HardwareSpec& hw);

struct TensorShape {
  std::int64_t channels = 1;
  std::int64_t height = 1;
  std::int64_t width = 1;

  void validate() const;
  std::int64_t elements() const { return channels * height * width; }
  friend bool operator==(const TensorShape&, const TensorShape&) = default;
};

struct ConvLayerSpec {
  std::int64_t in_channels = 1;
  std::int64_t out_channels = 1;
  int kernel = 1;
  int stride = 1;
  std::int64_t groups = 1;
  bool has_bias = false;

  void validate() const;
  // Zero padding of kernel/2 on every side.
  TensorShape output_shape(const TensorShape& input) const;
  std::int64_t weight_count() const { return out_channels * (in_channels / groups) * kernel * kernel; }

  friend bool operator==(const ConvLayerSpec&, const ConvLayerSpec&) = default;
};

/// Bottleneck block: 1x1 -> 3x3 (carries the stride) -> 1x1, optional
/// squeeze-excitation after the 3x3 and optional 1x1 projection shortcut.
struct BlockSpec {
  ConvLayerSpec conv1;
  ConvLayerSpec conv2;
  ConvLayerSpec conv3;
  std::optional<std::int64_t> se_reduction;
  bool has_downsample = false;
  TensorShape input_shape;

  void validate() const;
  TensorShape mid_shape() const { return conv1.output_shape(input_shape); }
  TensorShape conv2_output_shape() const { return conv2.output_shape(mid_shape()); }
  TensorShape output_shape() const { return conv3.output_shape(conv2_output_shape()); }
  int stride() const { return conv2.stride; }
  ConvLayerSpec downsample() const;
  // Hidden width of the SE bottleneck: block input width / reduction, at least 1.
  std::int64_t se_hidden() const;

  friend bool operator==(const BlockSpec&, const BlockSpec&) = default;
};

/// Convenience constructor for a standard bottleneck block.
BlockSpec make_bottleneck(TensorShape input, std::int64_t width, std::int64_t out_channels, int stride,
                          std::int64_t groups = 1, std::optional<std::int64_t> se_reduction = std::nullopt);

enum class Paradigm { kSpatial, kChannel, kLayer, kStatic };

std::string_view to_string(Paradigm p);
Paradigm parse_paradigm(std::string_view text);

struct DynamicConfig {
  Paradigm paradigm = Paradigm::kStatic;
  std::optional<std::int64_t> spatial_granularity;  // S
  std::optional<std::int64_t> channel_granularity;  // G

  static DynamicConfig spatial(std::int64_t s) { return {Paradigm::kSpatial, s, std::nullopt}; }
  static DynamicConfig channel(std::int64_t g) { return {Paradigm::kChannel, std::nullopt, g}; }
  static DynamicConfig layer() { return {Paradigm::kLayer, std::nullopt, std::nullopt}; }
  static DynamicConfig fixed() { return {Paradigm::kStatic, std::nullopt, std::nullopt}; }

  friend bool operator==(const DynamicConfig&, const DynamicConfig&) = default;
};

struct ActivationProfile {
  double r_spatial = 1.0;
  // Rate of the halo-dilated mask; estimated from r_spatial when absent.
  std::optional<double> r_spatial_dilated;
  double r_channel = 1.0;
  double r_layer = 1.0;

  void validate() const;
  static ActivationProfile uniform(double r);
};

/// Every positive divisor of `feature_size`, ascending.
std::vector<std::int64_t> enumerate_granularities(std::int64_t feature_size);

/// Checks `cfg` against the block's shapes and returns it unchanged.
/// Spatial granularity must divide both output height and width; channel
/// granularity must divide the 3x3 convolution's width.
DynamicConfig validate_config(const BlockSpec& block, const DynamicConfig& cfg);

/// Number of coarse mask cells per sample: (H/S)*(W/S) for Spatial, one for
/// Layer (a whole-feature cell), zero otherwise.
std::int64_t coarse_cells(const BlockSpec& block, const DynamicConfig& cfg);

}  // namespace dynlat

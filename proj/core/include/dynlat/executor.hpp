#pragma once

// Small dense numerical executor for mask-and-compute blocks. It is a
// correctness oracle for the gather / compute / scatter pipeline, not a fast
// path: everything is 64-bit, single-threaded and evaluated in a fixed
// summation order.

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dynlat/core_model.hpp"

namespace dynlat {

struct Tensor {
  std::int64_t batch = 1;
  TensorShape shape;
  std::vector<double> values;  // (batch, channel, row, col), row-major

  Tensor() = default;
  Tensor(std::int64_t n, TensorShape s, double fill = 0.0);

  std::size_t index(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return static_cast<std::size_t>(((n * shape.channels + c) * shape.height + h) * shape.width + w);
  }
  double& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) { return values[index(n, c, h, w)]; }
  double at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const { return values[index(n, c, h, w)]; }
};

// Throws ShapeMismatch when shapes differ.
double max_abs_diff(const Tensor& a, const Tensor& b);

/// Weights are laid out (out, in / groups, k, k). Zero padding of k / 2.
Tensor conv2d_direct(const Tensor& x, const ConvLayerSpec& layer, std::span<const double> weights);

/// Seeded 64-bit Mersenne Twister with a portable mapping to (0, 1).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform();  // open interval (0, 1)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double gumbel();   // -log(-log U)
  bool bernoulli(double p) { return uniform() < p; }
  std::uint64_t bits() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

/// Soft "compute" probability of a two-way Gumbel-Softmax whose logits are
/// read as log-probabilities, with explicit noise values.
double gumbel_softmax_pair(double logit_keep, double logit_skip, double tau, double noise_keep = 0.0,
                           double noise_skip = 0.0);

struct MaskerMode {
  bool train = false;
  double tau = 1.0;
  std::uint64_t seed = 0;
  bool zero_noise = false;

  static MaskerMode inference() { return {}; }
  static MaskerMode training(double tau, std::uint64_t seed) { return {true, tau, seed, false}; }
  static MaskerMode noiseless(double tau) { return {true, tau, 0, true}; }
};

struct SpatialMask {
  std::int64_t batch = 1;
  std::int64_t granularity = 1;
  std::int64_t cells_h = 1;
  std::int64_t cells_w = 1;
  std::int64_t height = 1;
  std::int64_t width = 1;
  std::vector<std::uint8_t> coarse;     // (batch, cells_h, cells_w)
  std::vector<std::uint8_t> upsampled;  // (batch, height, width)
  std::vector<std::uint8_t> dilated;    // (batch, height, width), filled by dilate_and_rates
  std::vector<double> soft;             // per coarse cell, train mode only

  std::int64_t active_cells() const;
};

/// Builds a mask from coarse bits and replicates each bit over its S x S patch.
SpatialMask make_spatial_mask(std::int64_t batch, std::int64_t height, std::int64_t width, std::int64_t granularity,
                              std::vector<std::uint8_t> coarse);

struct ChannelMask {
  std::int64_t batch = 1;
  std::int64_t granularity = 1;
  std::int64_t channels = 1;
  std::vector<std::uint8_t> coarse;    // (batch, channels / granularity)
  std::vector<std::uint8_t> expanded;  // (batch, channels)
  std::vector<double> soft;

  double rate() const;
};

ChannelMask make_channel_mask(std::int64_t batch, std::int64_t channels, std::int64_t granularity,
                              std::vector<std::uint8_t> coarse);

/// 1x1 convolution from the block input to (keep, skip) logits.
struct SpatialMaskerWeights {
  std::int64_t in_channels = 1;
  std::vector<double> weight;  // (2, in_channels)
  std::vector<double> bias{0.0, 0.0};
};

/// Pool -> Linear(C, hidden) -> ReLU -> Linear(hidden, 2D). Pair d is
/// (logit[2d] keep, logit[2d+1] skip).
struct ChannelMaskerWeights {
  std::int64_t in_channels = 1;
  std::int64_t mask_dim = 1;
  std::int64_t hidden = 16;
  std::vector<double> w1, b1;  // (hidden, in_channels), (hidden)
  std::vector<double> w2, b2;  // (2 * mask_dim, hidden), (2 * mask_dim)
};

SpatialMaskerWeights random_spatial_masker(std::int64_t in_channels, std::uint64_t seed);
ChannelMaskerWeights random_channel_masker(std::int64_t in_channels, std::int64_t mask_dim, std::uint64_t seed);

/// Adaptive average pooling of the block input onto the (H/S) x (W/S) grid of
/// the 3x3 convolution's output, then the 1x1 masker. Argmax in inference
/// (keep wins ties), seeded Gumbel-Softmax in train mode.
SpatialMask spatial_masker_forward(const Tensor& x, const SpatialMaskerWeights& w, const BlockSpec& block,
                                   std::int64_t granularity, const MaskerMode& mode = {});

ChannelMask channel_masker_forward(const Tensor& x, const ChannelMaskerWeights& w, const BlockSpec& block,
                                   std::int64_t granularity, const MaskerMode& mode = {});

/// One decision per sample from a single pooled cell.
std::vector<std::uint8_t> layer_masker_forward(const Tensor& x, const SpatialMaskerWeights& w,
                                               const MaskerMode& mode = {});

struct SpatialRates {
  double r_spatial = 0.0;
  double r_spatial_dilated = 0.0;
};

/// Square dilation of the upsampled mask by (k - 1) / 2, clipped at borders.
SpatialRates dilate_and_rates(SpatialMask& mask, int kernel);

/// (w0 - w1) for a 2-output 1x1 masker; x . d >= 0 selects "compute".
std::vector<double> fused_masker_weight_identity(const SpatialMaskerWeights& w);

struct BlockWeights {
  std::vector<double> conv1, conv2, conv3, downsample;
  std::vector<double> se_reduce, se_expand;  // (hidden, C2), (C2, hidden)
};

BlockWeights random_block_weights(const BlockSpec& block, std::uint64_t seed);

struct BlockMasks {
  std::optional<SpatialMask> spatial;
  std::optional<ChannelMask> channel;
  std::vector<std::uint8_t> layer;  // one bit per sample
};

struct ExecutorFault {
  bool flip_scatter_index = false;
};

/// Plain block: conv1 -> conv2 (-> SE) -> conv3, plus the shortcut.
Tensor block_forward_dense(const Tensor& x, const BlockSpec& block, const BlockWeights& w);

/// Computes everything densely and applies the masks multiplicatively;
/// unselected positions take the shortcut value.
Tensor block_forward_dense_masked(const Tensor& x, const BlockSpec& block, const BlockWeights& w,
                                  const DynamicConfig& cfg, const BlockMasks& masks);

/// Computes only selected patches, channels or samples.
Tensor block_forward_sparse(const Tensor& x, const BlockSpec& block, const BlockWeights& w, const DynamicConfig& cfg,
                            const BlockMasks& masks, const ExecutorFault& fault = {});

// ---- equivalence suite ----------------------------------------------------

struct VerifyCase {
  Paradigm paradigm = Paradigm::kSpatial;
  TensorShape input{8, 16, 16};
  std::int64_t width = 4;
  std::int64_t out_channels = 8;
  int stride = 1;
  std::int64_t groups = 1;
  std::optional<std::int64_t> se_reduction;
  std::int64_t granularity = 1;  // S or G; ignored for layer
  std::int64_t batch = 1;
  double density = 0.5;
  std::uint64_t seed = 0;
  double tolerance = 1e-9;
};

struct VerifyResult {
  VerifyCase config;
  double max_deviation = 0.0;
  bool passed = true;
};

/// `per_paradigm` seeded cases for each of spatial, channel and layer, with
/// shapes up to 32x32x16.
std::vector<VerifyCase> default_verify_cases(std::size_t per_paradigm, std::uint64_t seed);

VerifyResult run_verify_case(const VerifyCase& c, const ExecutorFault& fault = {});

// Test-vector files: a leading `tolerance = ...` and one [case] section per
// case with paradigm, input (CxHxW), width, out, stride, groups,
// se_reduction, granularity, batch, density, seed.
std::vector<VerifyCase> parse_verify_cases(std::string_view text);
std::string serialize_verify_cases(const std::vector<VerifyCase>& cases);

}  // namespace dynlat

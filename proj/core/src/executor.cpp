#include "dynlat/executor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dynlat/error.hpp"
#include "dynlat/kv.hpp"

namespace dynlat {

namespace {

using Mask = std::vector<std::uint8_t>;

// Shared direct convolution. `pad` is explicit so the sparse path can run
// valid convolutions on gathered halo patches. `out_mask` / `in_mask` are
// optional (batch, channels) selections; skipped outputs stay zero.
Tensor conv_core(const Tensor& x, const ConvLayerSpec& layer, std::span<const double> w, std::int64_t pad,
                 std::int64_t out_h, std::int64_t out_w, const Mask* out_mask = nullptr,
                 const Mask* in_mask = nullptr) {
  if (x.shape.channels != layer.in_channels) {
    throw Error(ErrorCode::kShapeMismatch, "input has " + std::to_string(x.shape.channels) + " channels, layer expects " +
                                               std::to_string(layer.in_channels));
  }
  if (layer.groups <= 0 || layer.in_channels % layer.groups != 0 || layer.out_channels % layer.groups != 0) {
    throw Error(ErrorCode::kShapeMismatch, "channels not divisible by groups");
  }
  if (static_cast<std::int64_t>(w.size()) != layer.weight_count()) {
    throw Error(ErrorCode::kShapeMismatch, "expected " + std::to_string(layer.weight_count()) + " weights, got " +
                                               std::to_string(w.size()));
  }
  const auto cin_g = layer.in_channels / layer.groups;
  const auto cout_g = layer.out_channels / layer.groups;
  const std::int64_t k = layer.kernel;
  const std::int64_t s = layer.stride;
  Tensor out(x.batch, TensorShape{layer.out_channels, out_h, out_w});
  for (std::int64_t n = 0; n < x.batch; ++n) {
    for (std::int64_t oc = 0; oc < layer.out_channels; ++oc) {
      if (out_mask && !(*out_mask)[static_cast<std::size_t>(n * layer.out_channels + oc)]) continue;
      const auto g = oc / cout_g;
      for (std::int64_t oy = 0; oy < out_h; ++oy) {
        for (std::int64_t ox = 0; ox < out_w; ++ox) {
          double acc = 0.0;
          for (std::int64_t icg = 0; icg < cin_g; ++icg) {
            const auto ic = g * cin_g + icg;
            if (in_mask && !(*in_mask)[static_cast<std::size_t>(n * layer.in_channels + ic)]) continue;
            for (std::int64_t ky = 0; ky < k; ++ky) {
              const auto iy = oy * s - pad + ky;
              if (iy < 0 || iy >= x.shape.height) continue;
              for (std::int64_t kx = 0; kx < k; ++kx) {
                const auto ix = ox * s - pad + kx;
                if (ix < 0 || ix >= x.shape.width) continue;
                acc += x.at(n, ic, iy, ix) * w[static_cast<std::size_t>(((oc * cin_g + icg) * k + ky) * k + kx)];
              }
            }
          }
          out.at(n, oc, oy, ox) = acc;
        }
      }
    }
  }
  return out;
}

Tensor conv_same(const Tensor& x, const ConvLayerSpec& layer, std::span<const double> w, const Mask* out_mask = nullptr,
                 const Mask* in_mask = nullptr) {
  const auto o = layer.output_shape(x.shape);
  return conv_core(x, layer, w, layer.kernel / 2, o.height, o.width, out_mask, in_mask);
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// In-place squeeze-excitation on the 3x3 output.
void apply_se(Tensor& t, const BlockSpec& block, const BlockWeights& w, const Mask* channel_mask = nullptr) {
  const auto c = t.shape.channels;
  const auto hidden = block.se_hidden();
  const double area = static_cast<double>(t.shape.height * t.shape.width);
  for (std::int64_t n = 0; n < t.batch; ++n) {
    auto active = [&](std::int64_t ch) {
      return !channel_mask || (*channel_mask)[static_cast<std::size_t>(n * c + ch)];
    };
    std::vector<double> pooled(static_cast<std::size_t>(c), 0.0);
    for (std::int64_t ch = 0; ch < c; ++ch) {
      if (!active(ch)) continue;
      double acc = 0.0;
      for (std::int64_t y = 0; y < t.shape.height; ++y) {
        for (std::int64_t x = 0; x < t.shape.width; ++x) acc += t.at(n, ch, y, x);
      }
      pooled[static_cast<std::size_t>(ch)] = acc / area;
    }
    std::vector<double> h(static_cast<std::size_t>(hidden), 0.0);
    for (std::int64_t j = 0; j < hidden; ++j) {
      double acc = 0.0;
      for (std::int64_t ch = 0; ch < c; ++ch) {
        if (!active(ch)) continue;
        acc += w.se_reduce[static_cast<std::size_t>(j * c + ch)] * pooled[static_cast<std::size_t>(ch)];
      }
      h[static_cast<std::size_t>(j)] = std::max(acc, 0.0);
    }
    for (std::int64_t ch = 0; ch < c; ++ch) {
      if (!active(ch)) continue;
      double acc = 0.0;
      for (std::int64_t j = 0; j < hidden; ++j) {
        acc += w.se_expand[static_cast<std::size_t>(ch * hidden + j)] * h[static_cast<std::size_t>(j)];
      }
      const double scale = sigmoid(acc);
      for (std::int64_t y = 0; y < t.shape.height; ++y) {
        for (std::int64_t x = 0; x < t.shape.width; ++x) t.at(n, ch, y, x) *= scale;
      }
    }
  }
}

Tensor shortcut(const Tensor& x, const BlockSpec& block, const BlockWeights& w) {
  if (!block.has_downsample) return x;
  return conv_same(x, block.downsample(), w.downsample);
}

// conv1 -> conv2 (-> SE) -> conv3 without the shortcut.
Tensor residual_branch(const Tensor& x, const BlockSpec& block, const BlockWeights& w) {
  auto mid = conv_same(x, block.conv1, w.conv1);
  auto c2 = conv_same(mid, block.conv2, w.conv2);
  if (block.se_reduction) apply_se(c2, block, w);
  return conv_same(c2, block.conv3, w.conv3);
}

Tensor sample(const Tensor& x, std::int64_t n) {
  Tensor out(1, x.shape);
  const auto per = static_cast<std::ptrdiff_t>(x.shape.elements());
  std::copy(x.values.begin() + n * per, x.values.begin() + (n + 1) * per, out.values.begin());
  return out;
}

void check_input(const Tensor& x, const BlockSpec& block) {
  if (!(x.shape == block.input_shape)) throw Error(ErrorCode::kShapeMismatch, "tensor does not match block input");
  if (static_cast<std::int64_t>(x.values.size()) != x.batch * x.shape.elements()) {
    throw Error(ErrorCode::kShapeMismatch, "tensor value count does not match its shape");
  }
}

const SpatialMask& require_spatial(const BlockMasks& m, const BlockSpec& block, const DynamicConfig& cfg,
                                   std::int64_t batch) {
  if (!m.spatial) throw Error(ErrorCode::kMaskShapeMismatch, "spatial paradigm needs a spatial mask");
  const auto& s = *m.spatial;
  const auto o = block.conv2_output_shape();
  const auto g = cfg.spatial_granularity.value_or(0);
  if (s.batch != batch || s.height != o.height || s.width != o.width || s.granularity != g ||
      s.cells_h * g != o.height || s.cells_w * g != o.width ||
      static_cast<std::int64_t>(s.coarse.size()) != batch * s.cells_h * s.cells_w ||
      static_cast<std::int64_t>(s.upsampled.size()) != batch * o.height * o.width) {
    throw Error(ErrorCode::kMaskShapeMismatch, "spatial mask does not match the block output grid");
  }
  return s;
}

const ChannelMask& require_channel(const BlockMasks& m, const BlockSpec& block, const DynamicConfig& cfg,
                                   std::int64_t batch) {
  if (!m.channel) throw Error(ErrorCode::kMaskShapeMismatch, "channel paradigm needs a channel mask");
  const auto& c = *m.channel;
  if (c.batch != batch || c.channels != block.conv2.out_channels ||
      c.granularity != cfg.channel_granularity.value_or(0) ||
      static_cast<std::int64_t>(c.expanded.size()) != batch * c.channels) {
    throw Error(ErrorCode::kMaskShapeMismatch, "channel mask does not match the 3x3 convolution width");
  }
  return c;
}

const Mask& require_layer(const BlockMasks& m, std::int64_t batch) {
  if (static_cast<std::int64_t>(m.layer.size()) != batch) {
    throw Error(ErrorCode::kMaskShapeMismatch, "layer mask needs one bit per sample");
  }
  return m.layer;
}

// PyTorch-style adaptive average pooling bins.
std::vector<double> adaptive_pool(const Tensor& x, std::int64_t n, std::int64_t cells_h, std::int64_t cells_w) {
  const auto c = x.shape.channels;
  const auto h = x.shape.height;
  const auto w = x.shape.width;
  std::vector<double> out(static_cast<std::size_t>(c * cells_h * cells_w));
  for (std::int64_t ch = 0; ch < c; ++ch) {
    for (std::int64_t i = 0; i < cells_h; ++i) {
      const auto y0 = (i * h) / cells_h;
      const auto y1 = ((i + 1) * h + cells_h - 1) / cells_h;
      for (std::int64_t j = 0; j < cells_w; ++j) {
        const auto x0 = (j * w) / cells_w;
        const auto x1 = ((j + 1) * w + cells_w - 1) / cells_w;
        double acc = 0.0;
        for (auto y = y0; y < y1; ++y) {
          for (auto xx = x0; xx < x1; ++xx) acc += x.at(n, ch, y, xx);
        }
        out[static_cast<std::size_t>((ch * cells_h + i) * cells_w + j)] =
            acc / static_cast<double>((y1 - y0) * (x1 - x0));
      }
    }
  }
  return out;
}

// Hard decision plus soft value for one (keep, skip) logit pair.
struct Decision {
  bool keep;
  double soft;
};

Decision decide(double keep, double skip, const MaskerMode& mode, Rng& rng) {
  if (!mode.train) return {keep >= skip, keep >= skip ? 1.0 : 0.0};
  double g0 = 0.0;
  double g1 = 0.0;
  if (!mode.zero_noise) {
    g0 = rng.gumbel();
    g1 = rng.gumbel();
  }
  const double soft = gumbel_softmax_pair(keep, skip, mode.tau, g0, g1);
  return {keep + g0 >= skip + g1, soft};
}

std::vector<double> random_vector(Rng& rng, std::int64_t count, double scale) {
  std::vector<double> v(static_cast<std::size_t>(count));
  for (auto& e : v) e = rng.uniform(-scale, scale);
  return v;
}

std::vector<double> random_conv(Rng& rng, const ConvLayerSpec& layer) {
  const auto fan_in = (layer.in_channels / layer.groups) * layer.kernel * layer.kernel;
  return random_vector(rng, layer.weight_count(), 1.0 / std::sqrt(static_cast<double>(fan_in)));
}

}  // namespace

Tensor::Tensor(std::int64_t n, TensorShape s, double fill)
    : batch(n), shape(s), values(static_cast<std::size_t>(n * s.elements()), fill) {}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.batch != b.batch || !(a.shape == b.shape) || a.values.size() != b.values.size()) {
    throw Error(ErrorCode::kShapeMismatch, "tensors differ in shape");
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) m = std::max(m, std::abs(a.values[i] - b.values[i]));
  return m;
}

Tensor conv2d_direct(const Tensor& x, const ConvLayerSpec& layer, std::span<const double> weights) {
  layer.validate();
  return conv_same(x, layer, weights);
}

double Rng::uniform() { return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53; }

double Rng::gumbel() { return -std::log(-std::log(uniform())); }

double gumbel_softmax_pair(double logit_keep, double logit_skip, double tau, double noise_keep, double noise_skip) {
  if (!(tau > 0)) throw Error(ErrorCode::kInvalidArgument, "temperature must be positive");
  return sigmoid(((logit_keep + noise_keep) - (logit_skip + noise_skip)) / tau);
}

std::int64_t SpatialMask::active_cells() const { return std::count(coarse.begin(), coarse.end(), std::uint8_t{1}); }

SpatialMask make_spatial_mask(std::int64_t batch, std::int64_t height, std::int64_t width, std::int64_t granularity,
                              std::vector<std::uint8_t> coarse) {
  if (granularity < 1 || height % granularity != 0 || width % granularity != 0) {
    throw Error(ErrorCode::kGranularityMismatch, "S=" + std::to_string(granularity) + " does not divide " +
                                                     std::to_string(height) + "x" + std::to_string(width));
  }
  SpatialMask m;
  m.batch = batch;
  m.granularity = granularity;
  m.height = height;
  m.width = width;
  m.cells_h = height / granularity;
  m.cells_w = width / granularity;
  if (static_cast<std::int64_t>(coarse.size()) != batch * m.cells_h * m.cells_w) {
    throw Error(ErrorCode::kMaskShapeMismatch, "coarse mask has " + std::to_string(coarse.size()) + " cells, expected " +
                                                   std::to_string(batch * m.cells_h * m.cells_w));
  }
  m.coarse = std::move(coarse);
  m.upsampled.assign(static_cast<std::size_t>(batch * height * width), 0);
  for (std::int64_t n = 0; n < batch; ++n) {
    for (std::int64_t y = 0; y < height; ++y) {
      for (std::int64_t x = 0; x < width; ++x) {
        m.upsampled[static_cast<std::size_t>((n * height + y) * width + x)] =
            m.coarse[static_cast<std::size_t>((n * m.cells_h + y / granularity) * m.cells_w + x / granularity)] ? 1 : 0;
      }
    }
  }
  return m;
}

double ChannelMask::rate() const {
  if (expanded.empty()) return 0.0;
  return static_cast<double>(std::count(expanded.begin(), expanded.end(), std::uint8_t{1})) /
         static_cast<double>(expanded.size());
}

ChannelMask make_channel_mask(std::int64_t batch, std::int64_t channels, std::int64_t granularity,
                              std::vector<std::uint8_t> coarse) {
  if (granularity < 1 || channels % granularity != 0) {
    throw Error(ErrorCode::kGranularityMismatch,
                "G=" + std::to_string(granularity) + " does not divide " + std::to_string(channels) + " channels");
  }
  const auto d = channels / granularity;
  if (static_cast<std::int64_t>(coarse.size()) != batch * d) {
    throw Error(ErrorCode::kMaskShapeMismatch, "coarse channel mask has the wrong length");
  }
  ChannelMask m;
  m.batch = batch;
  m.granularity = granularity;
  m.channels = channels;
  m.coarse = std::move(coarse);
  m.expanded.resize(static_cast<std::size_t>(batch * channels));
  for (std::int64_t n = 0; n < batch; ++n) {
    for (std::int64_t c = 0; c < channels; ++c) {
      m.expanded[static_cast<std::size_t>(n * channels + c)] =
          m.coarse[static_cast<std::size_t>(n * d + c / granularity)] ? 1 : 0;
    }
  }
  return m;
}

SpatialMaskerWeights random_spatial_masker(std::int64_t in_channels, std::uint64_t seed) {
  Rng rng(seed);
  SpatialMaskerWeights w;
  w.in_channels = in_channels;
  w.weight = random_vector(rng, 2 * in_channels, 1.0);
  w.bias = random_vector(rng, 2, 0.1);
  return w;
}

ChannelMaskerWeights random_channel_masker(std::int64_t in_channels, std::int64_t mask_dim, std::uint64_t seed) {
  Rng rng(seed);
  ChannelMaskerWeights w;
  w.in_channels = in_channels;
  w.mask_dim = mask_dim;
  w.hidden = std::max<std::int64_t>(mask_dim / 16, 16);
  w.w1 = random_vector(rng, w.hidden * in_channels, 1.0);
  w.b1 = random_vector(rng, w.hidden, 0.1);
  w.w2 = random_vector(rng, 2 * mask_dim * w.hidden, 1.0);
  w.b2 = random_vector(rng, 2 * mask_dim, 0.1);
  return w;
}

SpatialMask spatial_masker_forward(const Tensor& x, const SpatialMaskerWeights& w, const BlockSpec& block,
                                   std::int64_t granularity, const MaskerMode& mode) {
  validate_config(block, DynamicConfig::spatial(granularity));
  check_input(x, block);
  if (w.in_channels != x.shape.channels || static_cast<std::int64_t>(w.weight.size()) != 2 * w.in_channels ||
      w.bias.size() != 2) {
    throw Error(ErrorCode::kShapeMismatch, "spatial masker weights do not match the input");
  }
  const auto o = block.conv2_output_shape();
  const auto ch = o.height / granularity;
  const auto cw = o.width / granularity;
  const auto c = x.shape.channels;
  Rng rng(mode.seed);
  std::vector<std::uint8_t> coarse;
  std::vector<double> soft;
  for (std::int64_t n = 0; n < x.batch; ++n) {
    const auto pooled = adaptive_pool(x, n, ch, cw);
    for (std::int64_t cell = 0; cell < ch * cw; ++cell) {
      double l0 = w.bias[0];
      double l1 = w.bias[1];
      for (std::int64_t k = 0; k < c; ++k) {
        const double v = pooled[static_cast<std::size_t>(k * ch * cw + cell)];
        l0 += w.weight[static_cast<std::size_t>(k)] * v;
        l1 += w.weight[static_cast<std::size_t>(c + k)] * v;
      }
      const auto d = decide(l0, l1, mode, rng);
      coarse.push_back(d.keep ? 1 : 0);
      soft.push_back(d.soft);
    }
  }
  auto m = make_spatial_mask(x.batch, o.height, o.width, granularity, std::move(coarse));
  if (mode.train) m.soft = std::move(soft);
  return m;
}

ChannelMask channel_masker_forward(const Tensor& x, const ChannelMaskerWeights& w, const BlockSpec& block,
                                   std::int64_t granularity, const MaskerMode& mode) {
  validate_config(block, DynamicConfig::channel(granularity));
  check_input(x, block);
  const auto c = x.shape.channels;
  const auto d = block.conv2.out_channels / granularity;
  if (w.in_channels != c || w.mask_dim != d || static_cast<std::int64_t>(w.w1.size()) != w.hidden * c ||
      static_cast<std::int64_t>(w.b1.size()) != w.hidden || static_cast<std::int64_t>(w.w2.size()) != 2 * d * w.hidden ||
      static_cast<std::int64_t>(w.b2.size()) != 2 * d) {
    throw Error(ErrorCode::kShapeMismatch, "channel masker weights do not match D=" + std::to_string(d));
  }
  Rng rng(mode.seed);
  std::vector<std::uint8_t> coarse;
  std::vector<double> soft;
  for (std::int64_t n = 0; n < x.batch; ++n) {
    const auto pooled = adaptive_pool(x, n, 1, 1);
    std::vector<double> h(static_cast<std::size_t>(w.hidden));
    for (std::int64_t j = 0; j < w.hidden; ++j) {
      double acc = w.b1[static_cast<std::size_t>(j)];
      for (std::int64_t k = 0; k < c; ++k) {
        acc += w.w1[static_cast<std::size_t>(j * c + k)] * pooled[static_cast<std::size_t>(k)];
      }
      h[static_cast<std::size_t>(j)] = std::max(acc, 0.0);
    }
    for (std::int64_t i = 0; i < d; ++i) {
      double l[2];
      for (int t = 0; t < 2; ++t) {
        const auto row = 2 * i + t;
        double acc = w.b2[static_cast<std::size_t>(row)];
        for (std::int64_t j = 0; j < w.hidden; ++j) {
          acc += w.w2[static_cast<std::size_t>(row * w.hidden + j)] * h[static_cast<std::size_t>(j)];
        }
        l[t] = acc;
      }
      const auto dec = decide(l[0], l[1], mode, rng);
      coarse.push_back(dec.keep ? 1 : 0);
      soft.push_back(dec.soft);
    }
  }
  auto m = make_channel_mask(x.batch, block.conv2.out_channels, granularity, std::move(coarse));
  if (mode.train) m.soft = std::move(soft);
  return m;
}

std::vector<std::uint8_t> layer_masker_forward(const Tensor& x, const SpatialMaskerWeights& w,
                                               const MaskerMode& mode) {
  const auto c = x.shape.channels;
  if (w.in_channels != c || static_cast<std::int64_t>(w.weight.size()) != 2 * c || w.bias.size() != 2) {
    throw Error(ErrorCode::kShapeMismatch, "layer masker weights do not match the input");
  }
  Rng rng(mode.seed);
  std::vector<std::uint8_t> out;
  for (std::int64_t n = 0; n < x.batch; ++n) {
    const auto pooled = adaptive_pool(x, n, 1, 1);
    double l0 = w.bias[0];
    double l1 = w.bias[1];
    for (std::int64_t k = 0; k < c; ++k) {
      l0 += w.weight[static_cast<std::size_t>(k)] * pooled[static_cast<std::size_t>(k)];
      l1 += w.weight[static_cast<std::size_t>(c + k)] * pooled[static_cast<std::size_t>(k)];
    }
    out.push_back(decide(l0, l1, mode, rng).keep ? 1 : 0);
  }
  return out;
}

SpatialRates dilate_and_rates(SpatialMask& mask, int kernel) {
  if (kernel < 1 || kernel % 2 == 0) throw Error(ErrorCode::kInvalidArgument, "dilation kernel must be odd");
  const std::int64_t r = (kernel - 1) / 2;
  const auto h = mask.height;
  const auto w = mask.width;
  mask.dilated.assign(mask.upsampled.size(), 0);
  std::int64_t on = 0;
  std::int64_t on_dil = 0;
  for (std::int64_t n = 0; n < mask.batch; ++n) {
    const auto* up = mask.upsampled.data() + n * h * w;
    auto* dil = mask.dilated.data() + n * h * w;
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        on += up[y * w + x];
        bool hit = false;
        for (auto yy = std::max<std::int64_t>(0, y - r); yy <= std::min(h - 1, y + r) && !hit; ++yy) {
          for (auto xx = std::max<std::int64_t>(0, x - r); xx <= std::min(w - 1, x + r); ++xx) {
            if (up[yy * w + xx]) {
              hit = true;
              break;
            }
          }
        }
        dil[y * w + x] = hit ? 1 : 0;
        on_dil += hit ? 1 : 0;
      }
    }
  }
  const double total = static_cast<double>(mask.batch * h * w);
  if (total == 0) return {};
  return {static_cast<double>(on) / total, static_cast<double>(on_dil) / total};
}

std::vector<double> fused_masker_weight_identity(const SpatialMaskerWeights& w) {
  if (static_cast<std::int64_t>(w.weight.size()) != 2 * w.in_channels) {
    throw Error(ErrorCode::kShapeMismatch, "masker must have exactly two output channels");
  }
  std::vector<double> d(static_cast<std::size_t>(w.in_channels));
  for (std::int64_t k = 0; k < w.in_channels; ++k) {
    d[static_cast<std::size_t>(k)] =
        w.weight[static_cast<std::size_t>(k)] - w.weight[static_cast<std::size_t>(w.in_channels + k)];
  }
  return d;
}

BlockWeights random_block_weights(const BlockSpec& block, std::uint64_t seed) {
  block.validate();
  Rng rng(seed);
  BlockWeights w;
  w.conv1 = random_conv(rng, block.conv1);
  w.conv2 = random_conv(rng, block.conv2);
  w.conv3 = random_conv(rng, block.conv3);
  if (block.has_downsample) w.downsample = random_conv(rng, block.downsample());
  if (block.se_reduction) {
    const auto c = block.conv2.out_channels;
    const auto h = block.se_hidden();
    w.se_reduce = random_vector(rng, h * c, 1.0 / std::sqrt(static_cast<double>(c)));
    w.se_expand = random_vector(rng, c * h, 1.0 / std::sqrt(static_cast<double>(h)));
  }
  return w;
}

Tensor block_forward_dense(const Tensor& x, const BlockSpec& block, const BlockWeights& w) {
  check_input(x, block);
  auto out = shortcut(x, block, w);
  const auto f = residual_branch(x, block, w);
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += f.values[i];
  return out;
}

Tensor block_forward_dense_masked(const Tensor& x, const BlockSpec& block, const BlockWeights& w,
                                  const DynamicConfig& cfg, const BlockMasks& masks) {
  check_input(x, block);
  validate_config(block, cfg);
  auto out = shortcut(x, block, w);
  switch (cfg.paradigm) {
    case Paradigm::kStatic: {
      const auto f = residual_branch(x, block, w);
      for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += f.values[i];
      break;
    }
    case Paradigm::kSpatial: {
      if (block.se_reduction) throw Error(ErrorCode::kInvalidArgument, "spatial masking with SE is not supported");
      const auto& m = require_spatial(masks, block, cfg, x.batch);
      const auto f = residual_branch(x, block, w);
      const auto& s = out.shape;
      for (std::int64_t n = 0; n < x.batch; ++n) {
        for (std::int64_t c = 0; c < s.channels; ++c) {
          for (std::int64_t y = 0; y < s.height; ++y) {
            for (std::int64_t xx = 0; xx < s.width; ++xx) {
              const double bit = m.upsampled[static_cast<std::size_t>((n * s.height + y) * s.width + xx)];
              out.at(n, c, y, xx) += bit * f.at(n, c, y, xx);
            }
          }
        }
      }
      break;
    }
    case Paradigm::kChannel: {
      const auto& m = require_channel(masks, block, cfg, x.batch);
      auto mid = conv_same(x, block.conv1, w.conv1);
      auto apply = [&](Tensor& t) {
        for (std::int64_t n = 0; n < t.batch; ++n) {
          for (std::int64_t c = 0; c < t.shape.channels; ++c) {
            const double bit = m.expanded[static_cast<std::size_t>(n * t.shape.channels + c)];
            for (std::int64_t y = 0; y < t.shape.height; ++y) {
              for (std::int64_t xx = 0; xx < t.shape.width; ++xx) t.at(n, c, y, xx) *= bit;
            }
          }
        }
      };
      apply(mid);
      auto c2 = conv_same(mid, block.conv2, w.conv2);
      apply(c2);
      if (block.se_reduction) apply_se(c2, block, w);
      const auto f = conv_same(c2, block.conv3, w.conv3);
      for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += f.values[i];
      break;
    }
    case Paradigm::kLayer: {
      const auto& m = require_layer(masks, x.batch);
      const auto f = residual_branch(x, block, w);
      const auto per = out.shape.elements();
      for (std::int64_t n = 0; n < x.batch; ++n) {
        const double bit = m[static_cast<std::size_t>(n)];
        for (std::int64_t i = 0; i < per; ++i) out.values[static_cast<std::size_t>(n * per + i)] +=
            bit * f.values[static_cast<std::size_t>(n * per + i)];
      }
      break;
    }
  }
  return out;
}

Tensor block_forward_sparse(const Tensor& x, const BlockSpec& block, const BlockWeights& w, const DynamicConfig& cfg,
                            const BlockMasks& masks, const ExecutorFault& fault) {
  check_input(x, block);
  validate_config(block, cfg);
  auto out = shortcut(x, block, w);
  switch (cfg.paradigm) {
    case Paradigm::kStatic: {
      const auto f = residual_branch(x, block, w);
      for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += f.values[i];
      break;
    }
    case Paradigm::kSpatial: {
      if (block.se_reduction) throw Error(ErrorCode::kInvalidArgument, "spatial masking with SE is not supported");
      const auto& m = require_spatial(masks, block, cfg, x.batch);
      const auto s = m.granularity;
      const std::int64_t k = block.conv2.kernel;
      const std::int64_t stride = block.conv2.stride;
      const std::int64_t pad = k / 2;
      const auto halo = (s - 1) * stride + k;
      const auto cin = x.shape.channels;
      const auto ih = x.shape.height;
      const auto iw = x.shape.width;

      // Gather plan: (sample, cell row, cell col) of every active patch.
      struct Patch {
        std::int64_t n, ci, cj;
      };
      std::vector<Patch> plan;
      for (std::int64_t n = 0; n < m.batch; ++n) {
        for (std::int64_t ci = 0; ci < m.cells_h; ++ci) {
          for (std::int64_t cj = 0; cj < m.cells_w; ++cj) {
            if (m.coarse[static_cast<std::size_t>((n * m.cells_h + ci) * m.cells_w + cj)]) plan.push_back({n, ci, cj});
          }
        }
      }
      if (plan.empty()) break;

      // Gather input patches with their halo; positions outside the feature
      // stay zero so conv2 sees the same zero padding as the dense path.
      const auto p = static_cast<std::int64_t>(plan.size());
      Tensor gathered(p, TensorShape{cin, halo, halo});
      for (std::int64_t i = 0; i < p; ++i) {
        const auto& pt = plan[static_cast<std::size_t>(i)];
        const auto y0 = pt.ci * s * stride - pad;
        const auto x0 = pt.cj * s * stride - pad;
        for (std::int64_t c = 0; c < cin; ++c) {
          for (std::int64_t y = 0; y < halo; ++y) {
            const auto yy = y0 + y;
            if (yy < 0 || yy >= ih) continue;
            for (std::int64_t xx = 0; xx < halo; ++xx) {
              const auto xs = x0 + xx;
              if (xs < 0 || xs >= iw) continue;
              gathered.at(i, c, y, xx) = x.at(pt.n, c, yy, xs);
            }
          }
        }
      }
      auto mid = conv_core(gathered, block.conv1, w.conv1, 0, halo, halo);
      // conv1 of a zero pad position must read as padding, not as conv1(0).
      for (std::int64_t i = 0; i < p; ++i) {
        const auto& pt = plan[static_cast<std::size_t>(i)];
        const auto y0 = pt.ci * s * stride - pad;
        const auto x0 = pt.cj * s * stride - pad;
        for (std::int64_t c = 0; c < mid.shape.channels; ++c) {
          for (std::int64_t y = 0; y < halo; ++y) {
            for (std::int64_t xx = 0; xx < halo; ++xx) {
              const auto yy = y0 + y;
              const auto xs = x0 + xx;
              if (yy < 0 || yy >= ih || xs < 0 || xs >= iw) mid.at(i, c, y, xx) = 0.0;
            }
          }
        }
      }
      const auto c2 = conv_core(mid, block.conv2, w.conv2, 0, s, s);
      const auto f = conv_core(c2, block.conv3, w.conv3, 0, s, s);

      for (std::int64_t i = 0; i < p; ++i) {
        auto pt = plan[static_cast<std::size_t>(i)];
        if (fault.flip_scatter_index && i == 0) {
          if (m.cells_w > 1) {
            pt.cj = (pt.cj + 1) % m.cells_w;
          } else {
            pt.ci = (pt.ci + 1) % m.cells_h;
          }
        }
        for (std::int64_t c = 0; c < f.shape.channels; ++c) {
          for (std::int64_t y = 0; y < s; ++y) {
            for (std::int64_t xx = 0; xx < s; ++xx) {
              out.at(pt.n, c, pt.ci * s + y, pt.cj * s + xx) += f.at(i, c, y, xx);
            }
          }
        }
      }
      break;
    }
    case Paradigm::kChannel: {
      const auto& m = require_channel(masks, block, cfg, x.batch);
      const auto mid = conv_same(x, block.conv1, w.conv1, &m.expanded);
      auto c2 = conv_same(mid, block.conv2, w.conv2, &m.expanded, &m.expanded);
      if (block.se_reduction) apply_se(c2, block, w, &m.expanded);
      const auto f = conv_same(c2, block.conv3, w.conv3, nullptr, &m.expanded);
      for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += f.values[i];
      break;
    }
    case Paradigm::kLayer: {
      const auto& m = require_layer(masks, x.batch);
      const auto per = out.shape.elements();
      for (std::int64_t n = 0; n < x.batch; ++n) {
        if (!m[static_cast<std::size_t>(n)]) continue;
        const auto f = residual_branch(sample(x, n), block, w);
        for (std::int64_t i = 0; i < per; ++i) out.values[static_cast<std::size_t>(n * per + i)] +=
            f.values[static_cast<std::size_t>(i)];
      }
      break;
    }
  }
  return out;
}

// ---- equivalence suite ----------------------------------------------------

namespace {

template <typename T>
T pick(Rng& rng, const std::vector<T>& v) {
  return v[static_cast<std::size_t>(rng.bits() % v.size())];
}

std::vector<std::int64_t> common_divisors(std::int64_t a, std::int64_t b) {
  std::vector<std::int64_t> out;
  for (auto d : enumerate_granularities(a)) {
    if (b % d == 0) out.push_back(d);
  }
  return out;
}

}  // namespace

std::vector<VerifyCase> default_verify_cases(std::size_t per_paradigm, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<VerifyCase> cases;
  for (const auto paradigm : {Paradigm::kSpatial, Paradigm::kChannel, Paradigm::kLayer}) {
    for (std::size_t i = 0; i < per_paradigm; ++i) {
      VerifyCase c;
      c.paradigm = paradigm;
      c.stride = pick(rng, std::vector<int>{1, 1, 2});
      const auto out_h = pick(rng, std::vector<std::int64_t>{2, 4, 6, 8, 12, 16});
      const auto out_w = pick(rng, std::vector<std::int64_t>{2, 4, 6, 8, 12, 16});
      c.input = TensorShape{pick(rng, std::vector<std::int64_t>{2, 4, 8, 16}), out_h * c.stride, out_w * c.stride};
      c.width = pick(rng, std::vector<std::int64_t>{2, 4, 8, 16});
      c.out_channels = pick(rng, std::vector<std::int64_t>{4, 8, 16});
      c.groups = pick(rng, enumerate_granularities(c.width));
      if (paradigm != Paradigm::kSpatial && c.input.channels >= 4 && rng.bernoulli(0.5)) c.se_reduction = 4;
      if (paradigm == Paradigm::kSpatial) c.granularity = pick(rng, common_divisors(out_h, out_w));
      if (paradigm == Paradigm::kChannel) c.granularity = pick(rng, enumerate_granularities(c.width));
      c.batch = pick(rng, std::vector<std::int64_t>{1, 2});
      c.density = rng.uniform();
      c.seed = rng.bits() >> 1;
      cases.push_back(c);
    }
  }
  return cases;
}

VerifyResult run_verify_case(const VerifyCase& c, const ExecutorFault& fault) {
  const auto block = make_bottleneck(c.input, c.width, c.out_channels, c.stride, c.groups, c.se_reduction);
  DynamicConfig cfg = DynamicConfig::layer();
  if (c.paradigm == Paradigm::kSpatial) cfg = DynamicConfig::spatial(c.granularity);
  if (c.paradigm == Paradigm::kChannel) cfg = DynamicConfig::channel(c.granularity);
  if (c.paradigm == Paradigm::kStatic) cfg = DynamicConfig::fixed();
  validate_config(block, cfg);

  Rng rng(c.seed);
  const auto weights = random_block_weights(block, rng.bits());
  Tensor x(c.batch, c.input);
  for (auto& v : x.values) v = rng.uniform(-1.0, 1.0);

  BlockMasks masks;
  if (c.paradigm == Paradigm::kSpatial) {
    const auto o = block.conv2_output_shape();
    std::vector<std::uint8_t> bits(
        static_cast<std::size_t>(c.batch * (o.height / c.granularity) * (o.width / c.granularity)));
    for (auto& b : bits) b = rng.bernoulli(c.density) ? 1 : 0;
    masks.spatial = make_spatial_mask(c.batch, o.height, o.width, c.granularity, std::move(bits));
  } else if (c.paradigm == Paradigm::kChannel) {
    std::vector<std::uint8_t> bits(static_cast<std::size_t>(c.batch * (c.width / c.granularity)));
    for (auto& b : bits) b = rng.bernoulli(c.density) ? 1 : 0;
    masks.channel = make_channel_mask(c.batch, c.width, c.granularity, std::move(bits));
  } else if (c.paradigm == Paradigm::kLayer) {
    for (std::int64_t n = 0; n < c.batch; ++n) masks.layer.push_back(rng.bernoulli(c.density) ? 1 : 0);
  }

  const auto dense = block_forward_dense_masked(x, block, weights, cfg, masks);
  const auto sparse = block_forward_sparse(x, block, weights, cfg, masks, fault);
  VerifyResult r;
  r.config = c;
  r.max_deviation = max_abs_diff(dense, sparse);
  r.passed = r.max_deviation < c.tolerance;
  return r;
}

std::vector<VerifyCase> parse_verify_cases(std::string_view text) {
  const auto doc = kv::parse(text);
  double tolerance = 1e-9;
  if (auto v = doc.preamble.find("tolerance")) tolerance = kv::to_double(*v, "tolerance");
  std::vector<VerifyCase> out;
  for (const auto& s : doc.sections) {
    if (s.name != "case") throw Error(ErrorCode::kParseError, "unexpected section [" + s.name + "]");
    VerifyCase c;
    c.tolerance = tolerance;
    c.paradigm = parse_paradigm(s.require("paradigm"));
    const auto& shape = s.require("input");
    const auto x1 = shape.find('x');
    const auto x2 = x1 == std::string::npos ? std::string::npos : shape.find('x', x1 + 1);
    if (x2 == std::string::npos) throw Error(ErrorCode::kParseError, "input must be CxHxW");
    c.input = TensorShape{kv::to_int(shape.substr(0, x1), "input"), kv::to_int(shape.substr(x1 + 1, x2 - x1 - 1), "input"),
                          kv::to_int(shape.substr(x2 + 1), "input")};
    c.width = kv::to_int(s.require("width"), "width");
    c.out_channels = kv::to_int(s.require("out"), "out");
    if (auto v = s.find("stride")) c.stride = static_cast<int>(kv::to_int(*v, "stride"));
    if (auto v = s.find("groups")) c.groups = kv::to_int(*v, "groups");
    if (auto v = s.find("se_reduction")) c.se_reduction = kv::to_int(*v, "se_reduction");
    if (auto v = s.find("granularity")) c.granularity = kv::to_int(*v, "granularity");
    if (auto v = s.find("batch")) c.batch = kv::to_int(*v, "batch");
    if (auto v = s.find("density")) c.density = kv::to_double(*v, "density");
    c.seed = static_cast<std::uint64_t>(kv::to_int(s.require("seed"), "seed"));
    if (auto v = s.find("tolerance")) c.tolerance = kv::to_double(*v, "tolerance");
    out.push_back(c);
  }
  return out;
}

std::string serialize_verify_cases(const std::vector<VerifyCase>& cases) {
  std::ostringstream out;
  out << "tolerance = " << kv::format_double(cases.empty() ? 1e-9 : cases.front().tolerance) << "\n";
  for (const auto& c : cases) {
    out << "\n[case]\n"
        << "paradigm = " << to_string(c.paradigm) << "\n"
        << "input = " << c.input.channels << 'x' << c.input.height << 'x' << c.input.width << "\n"
        << "width = " << c.width << "\n"
        << "out = " << c.out_channels << "\n"
        << "stride = " << c.stride << "\n"
        << "groups = " << c.groups << "\n";
    if (c.se_reduction) out << "se_reduction = " << *c.se_reduction << "\n";
    out << "granularity = " << c.granularity << "\n"
        << "batch = " << c.batch << "\n"
        << "density = " << kv::format_double(c.density) << "\n"
        << "seed = " << c.seed << "\n";
  }
  return out.str();
}

}  // namespace dynlat

#include "dynlat/flops.hpp"

#include <algorithm>
#include <sstream>

#include "dynlat/error.hpp"
#include "dynlat/kv.hpp"
#include "dynlat/network.hpp"

namespace dynlat {

std::int64_t conv_macs(const ConvLayerSpec& layer, const TensorShape& out_shape) {
  if (out_shape.channels != layer.out_channels) {
    throw Error(ErrorCode::kShapeMismatch, "output shape has " + std::to_string(out_shape.channels) +
                                               " channels, layer produces " + std::to_string(layer.out_channels));
  }
  if (layer.groups <= 0 || layer.in_channels % layer.groups != 0) {
    throw Error(ErrorCode::kShapeMismatch, "input channels not divisible by groups");
  }
  if (out_shape.height <= 0 || out_shape.width <= 0) return 0;
  return out_shape.height * out_shape.width * out_shape.channels * (layer.in_channels / layer.groups) *
         layer.kernel * layer.kernel;
}

std::int64_t channel_masker_hidden(std::int64_t mask_dim) { return std::max<std::int64_t>(mask_dim / 16, 16); }

std::int64_t masker_macs(const BlockSpec& block, const DynamicConfig& cfg) {
  switch (cfg.paradigm) {
    case Paradigm::kSpatial:
    case Paradigm::kLayer: {
      const auto& in = block.input_shape;
      return in.elements() + coarse_cells(block, cfg) * 2 * in.channels;
    }
    case Paradigm::kChannel: {
      const auto c = block.input_shape.channels;
      const auto d = block.conv2.out_channels / cfg.channel_granularity.value();
      const auto h = channel_masker_hidden(d);
      return c * h + h * 2 * d;
    }
    case Paradigm::kStatic:
      return 0;
  }
  return 0;
}

FlopsBreakdown block_flops_static(const BlockSpec& block) {
  FlopsBreakdown f;
  const auto mid = block.mid_shape();
  const auto c2 = block.conv2_output_shape();
  f.conv1 = static_cast<double>(conv_macs(block.conv1, mid));
  f.conv2 = static_cast<double>(conv_macs(block.conv2, c2));
  f.conv3 = static_cast<double>(conv_macs(block.conv3, block.output_shape()));
  if (block.se_reduction) f.se = static_cast<double>(2 * block.conv2.out_channels * block.se_hidden());
  if (block.has_downsample) f.downsample = static_cast<double>(conv_macs(block.downsample(), block.output_shape()));
  return f;
}

double dilated_rate_estimate(double r_spatial, std::int64_t granularity, int kernel) {
  const double grown = static_cast<double>(granularity + kernel - 1) / static_cast<double>(granularity);
  return std::min(1.0, r_spatial * grown * grown);
}

double dilated_rate(const BlockSpec& block, const DynamicConfig& cfg, const ActivationProfile& prof) {
  if (prof.r_spatial_dilated) return *prof.r_spatial_dilated;
  const auto out = block.conv2_output_shape();
  const auto s = cfg.paradigm == Paradigm::kSpatial ? cfg.spatial_granularity.value_or(1) : out.height;
  return dilated_rate_estimate(prof.r_spatial, s, block.conv2.kernel);
}

FlopsBreakdown block_flops_dynamic(const BlockSpec& block, const DynamicConfig& cfg, const ActivationProfile& prof) {
  validate_config(block, cfg);
  prof.validate();
  FlopsBreakdown f = block_flops_static(block);
  switch (cfg.paradigm) {
    case Paradigm::kSpatial: {
      const double rs = prof.r_spatial;
      f.conv1 *= dilated_rate(block, cfg, prof);
      f.conv2 *= rs;
      f.conv3 *= rs;
      f.se *= rs;
      f.downsample *= rs;
      break;
    }
    case Paradigm::kChannel: {
      const double rc = prof.r_channel;
      f.conv1 *= rc;
      f.conv2 *= rc * rc;
      f.conv3 *= rc;
      break;
    }
    case Paradigm::kLayer: {
      const double rl = prof.r_layer;
      f.conv1 *= rl;
      f.conv2 *= rl;
      f.conv3 *= rl;
      f.se *= rl;
      f.downsample *= rl;
      break;
    }
    case Paradigm::kStatic:
      break;
  }
  f.masker = static_cast<double>(masker_macs(block, cfg));
  return f;
}

double theoretical_speedup(const FlopsBreakdown& stat, const FlopsBreakdown& dyn) {
  const double denom = stat.convs();
  if (denom == 0) throw Error(ErrorCode::kDivisionByZero, "static block has no convolution MACs");
  return dyn.convs() / denom;
}

double spatial_speedup(double f1, double f2, double f3, double r_spatial, double r_dilated) {
  const double denom = f1 + f2 + f3;
  if (denom == 0) throw Error(ErrorCode::kDivisionByZero, "F1 + F2 + F3 is zero");
  return (r_dilated * f1 + r_spatial * f2 + r_spatial * f3) / denom;
}

double channel_speedup(double f1, double f2, double f3, double r_channel) {
  const double denom = f1 + f2 + f3;
  if (denom == 0) throw Error(ErrorCode::kDivisionByZero, "F1 + F2 + F3 is zero");
  return (r_channel * f1 + r_channel * r_channel * f2 + r_channel * f3) / denom;
}

NetworkFlopsReport network_flops(const NetworkSpec& net, const std::vector<DynamicConfig>& configs,
                                 const std::vector<ActivationProfile>& profiles) {
  const auto blocks = net.blocks();
  if (configs.size() != blocks.size() || profiles.size() != blocks.size()) {
    throw Error(ErrorCode::kProfileCountMismatch,
                "network has " + std::to_string(blocks.size()) + " blocks, got " + std::to_string(configs.size()) +
                    " configs and " + std::to_string(profiles.size()) + " profiles");
  }
  NetworkFlopsReport report;
  report.stem = net.stem_macs();
  report.classifier = net.classifier_macs();
  std::int64_t stat = report.stem + report.classifier;
  double dyn = static_cast<double>(report.stem + report.classifier);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    auto s = block_flops_static(blocks[i]);
    auto d = block_flops_dynamic(blocks[i], configs[i], profiles[i]);
    stat += static_cast<std::int64_t>(s.total());
    dyn += d.total();
    report.blocks_static.push_back(s);
    report.blocks_dynamic.push_back(d);
  }
  report.f_stat = stat;
  report.f_dyn = dyn;
  if (stat == 0) throw Error(ErrorCode::kDivisionByZero, "network has no MACs");
  report.ratio = dyn / static_cast<double>(stat);
  return report;
}

std::string flops_csv_header() { return "block_id,F1,F2,F3,masker,se,total_static,total_dynamic,ratio"; }

std::string flops_csv_row(const std::string& block_id, const FlopsBreakdown& stat, const FlopsBreakdown& dyn) {
  using kv::format_double;
  std::ostringstream out;
  const double ratio = stat.total() > 0 ? dyn.total() / stat.total() : 0.0;
  out << block_id << ',' << format_double(dyn.conv1) << ',' << format_double(dyn.conv2) << ','
      << format_double(dyn.conv3) << ',' << format_double(dyn.masker) << ',' << format_double(dyn.se) << ','
      << format_double(stat.total()) << ',' << format_double(dyn.total()) << ',' << format_double(ratio);
  return out.str();
}

}  // namespace dynlat

#include "msafeb/msafeb.hpp"

#include <algorithm>

#include "msafeb/errors.hpp"

namespace msafeb {

namespace {

std::size_t aspp_kernel(std::size_t rate) { return rate == 1 ? 1 : 3; }

ConvSpec branch_spec(const MsafebConfig& c, std::size_t kernel) {
  ConvSpec s;
  s.in_channels = c.input_channels;
  s.out_channels = c.branch_filters;
  s.kernel = kernel;
  s.dilation = c.branch_dilation;
  s.groups = c.branch_groups;
  return s;
}

ConvSpec aspp_spec(const MsafebConfig& c, std::size_t rate) {
  ConvSpec s;
  s.in_channels = c.branch_filters;
  s.out_channels = c.aspp_branch_channels;
  s.kernel = aspp_kernel(rate);
  s.dilation = rate;
  return s;
}

ConvSpec fusion_spec(const MsafebConfig& c) {
  ConvSpec s;
  s.in_channels = c.fusion_input_channels();
  s.out_channels = c.fusion_channels;
  return s;
}

ConvSpec spatial_spec(const MsafebConfig& c) {
  ConvSpec s;
  s.in_channels = 2;
  s.out_channels = 1;
  s.kernel = c.attention.spatial_kernel;
  s.bias = false;
  return s;
}

}  // namespace

std::string to_string(AttentionVariant v) {
  switch (v) {
    case AttentionVariant::identity: return "identity";
    case AttentionVariant::channel_gate: return "channel_gate";
    case AttentionVariant::channel_then_spatial: return "channel_then_spatial";
  }
  return "unknown";
}

AttentionVariant parse_attention_variant(const std::string& s) {
  if (s == "identity") return AttentionVariant::identity;
  if (s == "channel_gate") return AttentionVariant::channel_gate;
  if (s == "channel_then_spatial") return AttentionVariant::channel_then_spatial;
  throw ConfigError("unknown attention variant '" + s +
                    "' (expected identity, channel_gate or channel_then_spatial)");
}

std::size_t MsafebConfig::attention_hidden() const {
  return std::max<std::size_t>(1, fusion_channels / std::max<std::size_t>(1, attention.reduction_ratio));
}

void MsafebConfig::validate() const {
  if (input_channels == 0 || branch_filters == 0 || fusion_channels == 0 ||
      aspp_branch_channels == 0 || branch_groups == 0 || branch_dilation == 0) {
    throw ConfigError("msafeb config: channel counts, groups and dilation must be >= 1");
  }
  if (branch_filters % branch_groups != 0 || input_channels % branch_groups != 0) {
    throw ConfigError("msafeb config: input_channels (" + std::to_string(input_channels) +
                      ") and branch_filters (" + std::to_string(branch_filters) +
                      ") must be divisible by branch_groups (" + std::to_string(branch_groups) +
                      ")");
  }
  if (branch_kernels.empty()) throw ConfigError("msafeb config: branch_kernels is empty");
  for (auto k : branch_kernels) {
    if (k == 0 || k % 2 == 0) {
      throw ConfigError("msafeb config: branch kernel " + std::to_string(k) + " must be odd");
    }
  }
  if (aspp_rates.empty() || aspp_rates.front() != 1) {
    throw ConfigError("msafeb config: aspp_rates must be nonempty and start at 1");
  }
  for (std::size_t i = 1; i < aspp_rates.size(); ++i) {
    if (aspp_rates[i] <= aspp_rates[i - 1]) {
      throw ConfigError("msafeb config: aspp_rates must be strictly increasing");
    }
  }
  if (attention.variant != AttentionVariant::identity && attention.reduction_ratio == 0) {
    throw ConfigError("msafeb config: reduction_ratio must be >= 1");
  }
  if (attention.variant == AttentionVariant::channel_then_spatial &&
      (attention.spatial_kernel == 0 || attention.spatial_kernel % 2 == 0)) {
    throw ConfigError("msafeb config: spatial_kernel must be odd");
  }
  if (!(bn_eps > 0.0f)) throw ConfigError("msafeb config: bn_eps must be positive");
}

MsafebConfig MsafebConfig::desk(std::size_t input_channels) {
  MsafebConfig c;
  c.input_channels = input_channels;
  c.branch_filters = input_channels / 4;
  c.aspp_branch_channels = std::max<std::size_t>(1, input_channels / 16);
  c.fusion_channels = input_channels / 4;
  return c;
}

std::vector<Tensor> multi_scale_conv(const Tensor& input, std::span<const ConvLayer> branches) {
  std::vector<Tensor> out;
  out.reserve(branches.size());
  for (const auto& b : branches) out.push_back(relu(b(input)));
  return out;
}

Tensor aspp(const Tensor& branch, const AsppStack& stack) {
  std::vector<Tensor> parts;
  parts.reserve(stack.branches.size());
  for (const auto& conv : stack.branches) parts.push_back(relu(conv(branch)));
  return concat_channels(parts);
}

std::vector<Tensor> gap_branches(std::span<const Tensor> branches) {
  std::vector<Tensor> out;
  out.reserve(branches.size());
  for (const auto& c : branches) out.push_back(global_avg_pool(c));
  return out;
}

Tensor apply_attention(const Tensor& x, const AttentionStage& stage) {
  if (stage.kind.variant == AttentionVariant::identity) return x;
  const Tensor squeezed = relu(stage.squeeze(global_avg_pool(x)));
  Tensor out = scale_channels(x, sigmoid(stage.excite(squeezed)));
  if (stage.kind.variant == AttentionVariant::channel_then_spatial) {
    const Tensor gate = sigmoid(stage.spatial(channel_mean_max(out)));
    out = scale_spatial(out, gate);
  }
  return out;
}

Tensor fuse_attend(const Tensor& input, std::span<const Tensor> aspp_maps,
                   const ConvLayer& fusion, const AttentionStage& attention) {
  static const char* names[] = {"D1", "D2", "D3", "D4", "D5", "D6"};
  std::vector<Tensor> parts{input};
  for (std::size_t i = 0; i < aspp_maps.size(); ++i) {
    const Tensor& d = aspp_maps[i];
    if (d.rank() != 4 || d.dim(0) != input.dim(0) || d.dim(2) != input.dim(2) ||
        d.dim(3) != input.dim(3)) {
      throw ShapeError(std::string("fuse_attend: ") + (i < 6 ? names[i] : "D?") + " has dims " +
                       to_string(d.dims()) + ", incompatible with I " + to_string(input.dims()));
    }
    parts.push_back(d);
  }
  const Tensor fused = relu(fusion(concat_channels(parts)));
  return apply_attention(fused, attention);
}

Tensor aggregate(const Tensor& attended, BatchNormState& bn, Mode mode) {
  return global_avg_pool(batch_norm(attended, bn, mode));
}

const Tensor* MsafebTrace::stage(const std::string& name) const {
  if (name == "I") return &input;
  if (name == "E") return &attended;
  if (name.size() >= 2 && (name[0] == 'C' || name[0] == 'D')) {
    std::size_t idx = 0;
    for (std::size_t i = 1; i < name.size(); ++i) {
      if (name[i] < '0' || name[i] > '9') return nullptr;
      idx = idx * 10 + static_cast<std::size_t>(name[i] - '0');
    }
    const auto& v = name[0] == 'C' ? branch : aspp;
    if (idx >= 1 && idx <= v.size()) return &v[idx - 1];
  }
  return nullptr;
}

MsafebBlock::MsafebBlock(MsafebConfig config, ParameterSet& params, const std::string& prefix,
                         Rng& rng)
    : config_(std::move(config)) {
  config_.validate();
  const auto& c = config_;
  for (std::size_t i = 0; i < c.branch_count(); ++i) {
    branches_.push_back(ConvLayer::create(branch_spec(c, c.branch_kernels[i]), params,
                                          prefix + ".branch" + std::to_string(i + 1), rng));
  }
  for (std::size_t i = 0; i < c.branch_count(); ++i) {
    AsppStack stack;
    for (auto rate : c.aspp_rates) {
      stack.branches.push_back(ConvLayer::create(
          aspp_spec(c, rate), params,
          prefix + ".aspp" + std::to_string(i + 1) + ".rate" + std::to_string(rate), rng));
    }
    aspp_.push_back(std::move(stack));
  }
  fusion_ = ConvLayer::create(fusion_spec(c), params, prefix + ".fusion", rng);
  attention_.kind = c.attention;
  if (c.attention.variant != AttentionVariant::identity) {
    const std::size_t hidden = c.attention_hidden();
    attention_.squeeze = DenseLayer::create(c.fusion_channels, hidden, params,
                                            prefix + ".attention.squeeze", rng);
    attention_.excite = DenseLayer::create(hidden, c.fusion_channels, params,
                                           prefix + ".attention.excite", rng);
  }
  if (c.attention.variant == AttentionVariant::channel_then_spatial) {
    attention_.spatial = ConvLayer::create(spatial_spec(c), params,
                                           prefix + ".attention.spatial", rng);
  }
  bn_ = register_batch_norm(c.fusion_channels, params, prefix + ".bn", c.bn_momentum, c.bn_eps);
}

MsafebTrace MsafebBlock::forward(const Tensor& input, Mode mode) {
  if (input.rank() != 4 || input.dim(1) != config_.input_channels) {
    throw ShapeError("msafeb: expected N x " + std::to_string(config_.input_channels) +
                     " x H x W input, got " + to_string(input.dims()));
  }
  MsafebTrace t;
  t.input = input;
  t.branch = multi_scale_conv(input, branches_);
  for (std::size_t i = 0; i < t.branch.size(); ++i) t.aspp.push_back(aspp(t.branch[i], aspp_[i]));
  t.pooled = gap_branches(t.branch);

  std::vector<Tensor> parts{input};
  parts.insert(parts.end(), t.aspp.begin(), t.aspp.end());
  t.fused = relu(fusion_(concat_channels(parts)));
  t.attended = apply_attention(t.fused, attention_);
  t.aggregated = aggregate(t.attended, bn_, mode);

  std::vector<Tensor> bands{t.aggregated};
  bands.insert(bands.end(), t.pooled.begin(), t.pooled.end());
  t.features = concat_channels(bands);
  return t;
}

std::vector<std::string> MsafebBlock::stage_names() const {
  std::vector<std::string> names{"I"};
  for (std::size_t i = 1; i <= config_.branch_count(); ++i) names.push_back("C" + std::to_string(i));
  for (std::size_t i = 1; i <= config_.branch_count(); ++i) names.push_back("D" + std::to_string(i));
  names.push_back("E");
  return names;
}

std::vector<std::pair<std::string, std::size_t>> ParamBreakdown::rows() const {
  return {{"branch_convs", branch_convs},
          {"aspp", aspp},
          {"fusion", fusion},
          {"attention", attention},
          {"batch_norm", batch_norm}};
}

ParamBreakdown param_count(const MsafebConfig& c) {
  c.validate();
  ParamBreakdown b;
  for (auto k : c.branch_kernels) b.branch_convs += branch_spec(c, k).param_count();
  std::size_t stack = 0;
  for (auto rate : c.aspp_rates) stack += aspp_spec(c, rate).param_count();
  b.aspp = stack * c.branch_count();
  b.fusion = fusion_spec(c).param_count();
  if (c.attention.variant != AttentionVariant::identity) {
    const std::size_t h = c.attention_hidden();
    b.attention = c.fusion_channels * h + h + h * c.fusion_channels + c.fusion_channels;
  }
  if (c.attention.variant == AttentionVariant::channel_then_spatial) {
    b.attention += spatial_spec(c).param_count();
  }
  b.batch_norm = 2 * c.fusion_channels;
  return b;
}

}  // namespace msafeb

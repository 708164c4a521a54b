#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "msafeb/layers.hpp"
#include "msafeb/params.hpp"
#include "msafeb/tensor.hpp"

namespace msafeb {

enum class AttentionVariant { identity, channel_gate, channel_then_spatial };

/// Attention applied after the fusion convolution. The gates are
/// sigmoid-bounded, so a gated map never exceeds its input in magnitude.
struct AttentionKind {
  AttentionVariant variant = AttentionVariant::channel_then_spatial;
  std::size_t reduction_ratio = 8;
  std::size_t spatial_kernel = 7;
};

std::string to_string(AttentionVariant v);
AttentionVariant parse_attention_variant(const std::string& s);

/// Every hyperparameter of the block. Defaults reproduce the 1920-channel
/// geometry: three grouped dilated branches of 480 filters, four ASPP rates
/// of 120 channels each, and a 480-channel fusion stage.
struct MsafebConfig {
  std::size_t input_channels = 1920;
  std::vector<std::size_t> branch_kernels{1, 3, 5};
  std::size_t branch_filters = 480;
  std::size_t branch_dilation = 4;
  std::size_t branch_groups = 8;
  std::vector<std::size_t> aspp_rates{1, 6, 12, 18};
  std::size_t aspp_branch_channels = 120;
  std::size_t fusion_channels = 480;
  AttentionKind attention;
  float bn_momentum = 0.9f;
  float bn_eps = 1e-5f;

  /// Throws ConfigError when an invariant is violated.
  void validate() const;

  std::size_t branch_count() const { return branch_kernels.size(); }
  std::size_t aspp_channels() const { return aspp_rates.size() * aspp_branch_channels; }
  std::size_t fusion_input_channels() const {
    return input_channels + branch_count() * aspp_channels();
  }
  std::size_t attention_hidden() const;
  /// Length of F: fusion_channels + |branch_kernels| * branch_filters.
  std::size_t feature_length() const {
    return fusion_channels + branch_count() * branch_filters;
  }

  /// Scaled-down geometry for desk-size experiments: K input channels,
  /// K/4 filters per branch, K/16 channels per ASPP rate, K/4 fusion width.
  static MsafebConfig desk(std::size_t input_channels = 64);
};

/// Four parallel dilated convolutions: kernel 1 at rate 1, kernel 3 otherwise.
struct AsppStack {
  std::vector<ConvLayer> branches;
};

struct AttentionStage {
  AttentionKind kind;
  DenseLayer squeeze;
  DenseLayer excite;
  ConvLayer spatial;
};

// Stage operations. Each is differentiable through the tape.

/// C_i = ReLU(conv_{k_i}(I)) for every branch kernel.
std::vector<Tensor> multi_scale_conv(const Tensor& input, std::span<const ConvLayer> branches);

/// D_i: channel concatenation of the ReLU'd rate branches applied to C_i.
Tensor aspp(const Tensor& branch, const AsppStack& stack);

/// G_i = GAP(C_i).
std::vector<Tensor> gap_branches(std::span<const Tensor> branches);

Tensor apply_attention(const Tensor& x, const AttentionStage& stage);

/// E = attention(ReLU(conv_1x1(I (+) D_1 (+) ... (+) D_n))).
Tensor fuse_attend(const Tensor& input, std::span<const Tensor> aspp_maps,
                   const ConvLayer& fusion, const AttentionStage& attention);

/// G = GAP(BN(E)).
Tensor aggregate(const Tensor& attended, BatchNormState& bn, Mode mode);

/// Intermediate results of one forward pass, named after the stages.
struct MsafebTrace {
  Tensor input;                 // I
  std::vector<Tensor> branch;   // C_i
  std::vector<Tensor> aspp;     // D_i
  std::vector<Tensor> pooled;   // G_i
  Tensor fused;                 // 1x1 fusion output before attention
  Tensor attended;              // E
  Tensor aggregated;            // G
  Tensor features;              // F = G (+) G_1 (+) ... (+) G_n

  /// Stage lookup by name: I, C<i>, D<i>, E (1-based branch index).
  const Tensor* stage(const std::string& name) const;
};

class MsafebBlock {
 public:
  /// Registers parameters under prefix in manifest order: branches, ASPP
  /// stacks, fusion, attention, batch norm.
  MsafebBlock(MsafebConfig config, ParameterSet& params, const std::string& prefix, Rng& rng);

  const MsafebConfig& config() const { return config_; }
  MsafebTrace forward(const Tensor& input, Mode mode);
  Tensor operator()(const Tensor& input, Mode mode) { return forward(input, mode).features; }

  std::span<const ConvLayer> branches() const { return branches_; }
  std::span<const AsppStack> aspp_stacks() const { return aspp_; }
  const ConvLayer& fusion() const { return fusion_; }
  const AttentionStage& attention() const { return attention_; }
  BatchNormState& bn() { return bn_; }

  /// Valid names for MsafebTrace::stage().
  std::vector<std::string> stage_names() const;

 private:
  MsafebConfig config_;
  std::vector<ConvLayer> branches_;
  std::vector<AsppStack> aspp_;
  ConvLayer fusion_;
  AttentionStage attention_;
  BatchNormState bn_;
};

/// Analytic learnable-scalar counts per stage.
struct ParamBreakdown {
  std::size_t branch_convs = 0;
  std::size_t aspp = 0;
  std::size_t fusion = 0;
  std::size_t attention = 0;
  std::size_t batch_norm = 0;

  std::size_t total() const { return branch_convs + aspp + fusion + attention + batch_norm; }
  std::vector<std::pair<std::string, std::size_t>> rows() const;
};

ParamBreakdown param_count(const MsafebConfig& config);

}  // namespace msafeb

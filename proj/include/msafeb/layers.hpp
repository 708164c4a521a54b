#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "msafeb/kernels.hpp"
#include "msafeb/rng.hpp"
#include "msafeb/tensor.hpp"

namespace msafeb {

enum class Mode { train, eval };

enum class Padding { same_zero, valid };

/// Full parameterization of a square 2-D convolution.
struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t dilation = 1;
  std::size_t groups = 1;
  Padding padding = Padding::same_zero;
  bool bias = true;

  /// Throws ConfigError on divisibility or even-kernel violations.
  void validate() const;
  Dims weight_dims() const;
  std::size_t weight_count() const;
  std::size_t param_count() const { return weight_count() + (bias ? out_channels : 0); }
  /// Per-side zero padding: dilation * (k - 1) / 2 for same_zero.
  std::size_t pad() const;
  std::size_t output_extent(std::size_t input_extent) const;
  kernels::ConvGeometry geometry(const Dims& input_dims) const;
};

/// Cross-correlation with zero padding. bias may be undefined when
/// spec.bias is false.
Tensor conv2d(const Tensor& input, const ConvSpec& spec, const Tensor& weights,
              const Tensor& bias = {});

/// Batch normalization parameters and running statistics.
struct BatchNormState {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  float momentum = 0.9f;
  float eps = 1e-5f;

  static BatchNormState create(std::size_t channels, float momentum = 0.9f, float eps = 1e-5f);
  std::size_t channels() const { return gamma.numel(); }
};

/// Train mode normalizes by biased batch statistics and updates the running
/// statistics; eval mode reads running statistics only.
Tensor batch_norm(const Tensor& input, BatchNormState& state, Mode mode);

/// N x C x H x W -> N x C spatial mean.
Tensor global_avg_pool(const Tensor& input);

/// Inverted dropout; identity in eval mode.
Tensor dropout(const Tensor& input, float rate, Mode mode, Rng& rng);

/// Mean over the batch of -log softmax(logits)[label].
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

/// Row-wise softmax, no graph.
std::vector<float> softmax_rows(const Tensor& logits);

}  // namespace msafeb

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "msafeb/layers.hpp"
#include "msafeb/params.hpp"

namespace msafeb {

/// Plain strided CNN producing an N x K x H x W feature map: each stage is
/// conv3x3/stride 2 -> BN -> ReLU, followed by a 1x1 projection to K.
struct BackboneConfig {
  std::vector<std::size_t> stage_channels{16, 32, 64};
  std::size_t out_channels = 64;
  std::size_t input_height = 64;
  std::size_t input_width = 64;
  float bn_momentum = 0.9f;
  float bn_eps = 1e-5f;

  /// Throws ConfigError unless the input extents divide by 2^stages.
  void validate() const;
  std::size_t output_height() const;
  std::size_t output_width() const;
};

class Backbone {
 public:
  Backbone(BackboneConfig config, ParameterSet& params, const std::string& prefix, Rng& rng);

  const BackboneConfig& config() const { return config_; }
  /// images: N x 3 x input_height x input_width.
  Tensor forward(const Tensor& images, Mode mode);

 private:
  struct Stage {
    ConvLayer conv;
    BatchNormState bn;
  };
  BackboneConfig config_;
  std::vector<Stage> stages_;
  ConvLayer head_;
};

}  // namespace msafeb

#include "msafeb/backbone.hpp"

#include "msafeb/errors.hpp"

namespace msafeb {

void BackboneConfig::validate() const {
  if (stage_channels.empty()) throw ConfigError("backbone: need at least one stage");
  if (out_channels == 0) throw ConfigError("backbone: out_channels must be >= 1");
  const std::size_t factor = std::size_t{1} << stage_channels.size();
  if (input_height == 0 || input_width == 0 || input_height % factor != 0 ||
      input_width % factor != 0) {
    throw ConfigError("backbone: input size " + std::to_string(input_height) + "x" +
                      std::to_string(input_width) + " not divisible by 2^" +
                      std::to_string(stage_channels.size()));
  }
}

std::size_t BackboneConfig::output_height() const {
  return input_height >> stage_channels.size();
}

std::size_t BackboneConfig::output_width() const {
  return input_width >> stage_channels.size();
}

Backbone::Backbone(BackboneConfig config, ParameterSet& params, const std::string& prefix,
                   Rng& rng)
    : config_(std::move(config)) {
  config_.validate();
  std::size_t in = 3;
  for (std::size_t i = 0; i < config_.stage_channels.size(); ++i) {
    ConvSpec spec;
    spec.in_channels = in;
    spec.out_channels = config_.stage_channels[i];
    spec.kernel = 3;
    spec.stride = 2;
    spec.bias = false;  // BN supplies the shift
    const std::string name = prefix + ".stage" + std::to_string(i + 1);
    Stage s;
    s.conv = ConvLayer::create(spec, params, name + ".conv", rng);
    s.bn = register_batch_norm(spec.out_channels, params, name + ".bn", config_.bn_momentum,
                               config_.bn_eps);
    stages_.push_back(std::move(s));
    in = spec.out_channels;
  }
  ConvSpec head;
  head.in_channels = in;
  head.out_channels = config_.out_channels;
  head_ = ConvLayer::create(head, params, prefix + ".head", rng);
}

Tensor Backbone::forward(const Tensor& images, Mode mode) {
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != config_.input_height ||
      images.dim(3) != config_.input_width) {
    throw ShapeError("backbone: expected N x 3 x " + std::to_string(config_.input_height) + " x " +
                     std::to_string(config_.input_width) + " images, got " +
                     to_string(images.dims()));
  }
  Tensor x = images;
  for (auto& s : stages_) x = relu(batch_norm(s.conv(x), s.bn, mode));
  return head_(x);
}

}  // namespace msafeb

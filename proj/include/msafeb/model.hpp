#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "msafeb/backbone.hpp"
#include "msafeb/msafeb.hpp"
#include "msafeb/params.hpp"

namespace msafeb {

struct ModelConfig {
  BackboneConfig backbone;
  MsafebConfig msafeb = MsafebConfig::desk(64);
  std::size_t n_classes = 4;
  bool with_msafeb = true;
  float dropout_rate = 0.5f;
  /// Backbone parameters stay fixed and its batch norms run in eval mode.
  bool freeze_backbone = false;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t classifier_inputs() const;
};

/// Activations of one forward pass.
struct ModelOutputs {
  Tensor backbone;                    // I
  std::optional<MsafebTrace> trace;   // present with the block
  Tensor features;                    // classifier input before dropout
  Tensor logits;

  /// Named activation: I, plus C<i>, D<i>, E when the block is present.
  const Tensor* stage(const std::string& name) const;
};

/// backbone -> (MSAFEB | GAP) -> dropout -> dense. Softmax lives in the loss.
class Model {
 public:
  explicit Model(ModelConfig config);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return config_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  /// dropout_rng is required in train mode when dropout_rate > 0.
  ModelOutputs forward(const Tensor& images, Mode mode, Rng* dropout_rng = nullptr);
  Tensor logits(const Tensor& images, Mode mode, Rng* dropout_rng = nullptr) {
    return forward(images, mode, dropout_rng).logits;
  }

  std::vector<std::string> stage_names() const;
  DenseLayer& classifier() { return classifier_; }

 private:
  ModelConfig config_;
  ParameterSet params_;
  std::unique_ptr<Backbone> backbone_;
  std::unique_ptr<MsafebBlock> block_;
  DenseLayer classifier_;
};

/// Throws ConfigError when the backbone width does not match the block input.
std::unique_ptr<Model> assemble_model(const ModelConfig& config);

}  // namespace msafeb

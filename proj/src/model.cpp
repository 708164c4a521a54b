#include "msafeb/model.hpp"

#include "msafeb/errors.hpp"

namespace msafeb {

void ModelConfig::validate() const {
  backbone.validate();
  if (n_classes < 2) throw ConfigError("model: need >= 2 classes, got " + std::to_string(n_classes));
  if (!(dropout_rate >= 0.0f && dropout_rate < 1.0f)) {
    throw ConfigError("model: dropout rate must lie in [0, 1)");
  }
  if (with_msafeb) {
    msafeb.validate();
    if (backbone.out_channels != msafeb.input_channels) {
      throw ConfigError("model: backbone produces " + std::to_string(backbone.out_channels) +
                        " channels but the block expects " +
                        std::to_string(msafeb.input_channels));
    }
  }
}

std::size_t ModelConfig::classifier_inputs() const {
  return with_msafeb ? msafeb.feature_length() : backbone.out_channels;
}

const Tensor* ModelOutputs::stage(const std::string& name) const {
  if (name == "I") return &backbone;
  if (trace) return trace->stage(name);
  return nullptr;
}

Model::Model(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  Rng rng(config_.seed);
  backbone_ = std::make_unique<Backbone>(config_.backbone, params_, "backbone", rng);
  if (config_.with_msafeb) {
    block_ = std::make_unique<MsafebBlock>(config_.msafeb, params_, "msafeb", rng);
  }
  classifier_ =
      DenseLayer::create(config_.classifier_inputs(), config_.n_classes, params_, "classifier", rng);
  if (config_.freeze_backbone) {
    for (auto& p : params_.entries()) {
      if (p.name.rfind("backbone.", 0) == 0) p.value.set_requires_grad(false);
    }
  }
}

ModelOutputs Model::forward(const Tensor& images, Mode mode, Rng* dropout_rng) {
  ModelOutputs out;
  out.backbone = backbone_->forward(images, config_.freeze_backbone ? Mode::eval : mode);
  if (block_) {
    out.trace = block_->forward(out.backbone, mode);
    out.features = out.trace->features;
  } else {
    out.features = global_avg_pool(out.backbone);
  }
  Tensor x = out.features;
  if (mode == Mode::train && config_.dropout_rate > 0.0f) {
    if (!dropout_rng) throw UsageError("model: train-mode forward needs a dropout generator");
    x = dropout(x, config_.dropout_rate, mode, *dropout_rng);
  }
  out.logits = classifier_(x);
  return out;
}

std::vector<std::string> Model::stage_names() const {
  std::vector<std::string> names{"I"};
  if (block_) {
    for (auto& n : block_->stage_names()) {
      if (n != "I") names.push_back(n);
    }
  }
  return names;
}

std::unique_ptr<Model> assemble_model(const ModelConfig& config) {
  return std::make_unique<Model>(config);
}

}  // namespace msafeb

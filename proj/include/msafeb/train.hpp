#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "msafeb/data.hpp"
#include "msafeb/model.hpp"

namespace msafeb {

struct TrainConfig {
  double learning_rate = 3e-3;
  double weight_decay = 1e-4;
  std::size_t batch_size = 16;
  std::size_t max_epochs = 50;
  std::size_t patience = 5;
  float dropout_rate = 0.5f;
  double val_fraction = 0.1;
  std::uint64_t seed = 0;
  AugmentFlags augment;
  bool freeze_backbone = false;

  void validate() const;
};

/// Patience counter on validation loss. An epoch improves when its loss is
/// strictly below the best so far; training stops once `patience` epochs in
/// a row have not improved.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  /// Returns true when this epoch is the new best.
  bool update(std::size_t epoch, double val_loss);
  bool should_stop() const { return wait_ >= patience_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_loss_; }

 private:
  std::size_t patience_;
  std::size_t wait_ = 0;
  std::size_t best_epoch_ = 0;
  double best_loss_ = std::numeric_limits<double>::infinity();
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_oa = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  bool early_stopped = false;
};

using Confusion = std::vector<std::vector<std::size_t>>;

struct Evaluation {
  double oa = 0.0;
  double loss = 0.0;
  Confusion confusion;  // rows: true class, columns: predicted
};

/// Index of the largest value; ties go to the lowest index.
std::size_t argmax(std::span<const float> row);

/// Trains on split.train_indices minus a stratified validation carve-out and
/// restores the parameters of the best-validation-loss epoch.
TrainResult train(Model& model, const Dataset& data, const DatasetSplit& split,
                  const TrainConfig& cfg);

/// Eval-mode accuracy, mean loss and confusion matrix over `indices`.
Evaluation evaluate(Model& model, const Dataset& data, std::span<const std::size_t> indices,
                    std::size_t batch_size = 64);

struct SplitOutcome {
  DatasetSplit split;
  TrainResult training;
  Evaluation test;
  std::unique_ptr<Model> model;  // kept only on request
};

struct Metrics {
  double train_ratio = 0.0;
  std::vector<double> per_split_oa;
  double mean_oa = 0.0;
  double sd_oa = 0.0;  // population SD
  std::vector<Confusion> confusion;

  /// Recomputes mean_oa and sd_oa from per_split_oa.
  void summarize();
  std::string render() const;
  /// mean_oa=..., sd_oa=..., split<k>_oa=... lines.
  std::vector<std::string> key_values() const;
};

struct ProtocolConfig {
  ModelConfig model;
  TrainConfig train;
  std::size_t n_splits = 5;
  std::uint64_t split_seed = 0;
  /// Splits trained concurrently. Results do not depend on this.
  std::size_t jobs = 1;
  bool keep_models = false;
};

struct ProtocolResult {
  Metrics metrics;
  std::vector<SplitOutcome> splits;
};

/// Split k uses split seed split_seed + k, and model and training seeds
/// offset by k from their configured values.
ProtocolResult run_protocol(const Dataset& data, double train_ratio, const ProtocolConfig& cfg);

std::vector<ProtocolResult> run_protocol(const Dataset& data, std::span<const double> ratios,
                                         const ProtocolConfig& cfg);

}  // namespace msafeb

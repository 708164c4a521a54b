#include "msafeb/train.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <sstream>
#include <thread>

#include "msafeb/errors.hpp"
#include "msafeb/layers.hpp"
#include "msafeb/optim.hpp"
#include "msafeb/stats.hpp"

namespace msafeb {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be > 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  if (max_epochs == 0) throw ConfigError("max epochs must be >= 1");
  if (patience == 0) throw ConfigError("patience must be >= 1");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw ConfigError("validation fraction must lie in (0, 1)");
  }
  if (!(dropout_rate >= 0.0f && dropout_rate < 1.0f)) {
    throw ConfigError("dropout rate must lie in [0, 1)");
  }
}

bool EarlyStopping::update(std::size_t epoch, double val_loss) {
  if (val_loss < best_loss_) {
    best_loss_ = val_loss;
    best_epoch_ = epoch;
    wait_ = 0;
    return true;
  }
  ++wait_;
  return false;
}

std::size_t argmax(std::span<const float> row) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < row.size(); ++i) {
    if (row[i] > row[best]) best = i;
  }
  return best;
}

Evaluation evaluate(Model& model, const Dataset& data, std::span<const std::size_t> indices,
                    std::size_t batch_size) {
  if (indices.empty()) throw UsageError("evaluate: empty test set");
  const std::size_t k = model.config().n_classes;
  if (data.class_count() > k) {
    throw UsageError("evaluate: dataset has " + std::to_string(data.class_count()) +
                     " classes, model has " + std::to_string(k));
  }
  NoGradGuard no_grad;
  Evaluation ev;
  ev.confusion.assign(k, std::vector<std::size_t>(k, 0));
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const auto batch = indices.subspan(start, std::min(batch_size, indices.size() - start));
    std::vector<std::size_t> labels;
    for (auto i : batch) labels.push_back(data.labels.at(i));
    const Tensor logits = model.logits(batch_tensor(data, batch), Mode::eval);
    loss_sum += double(softmax_cross_entropy(logits, labels).item()) * double(batch.size());
    auto v = logits.data();
    for (std::size_t n = 0; n < batch.size(); ++n) {
      const std::size_t pred = argmax(v.subspan(n * k, k));
      ++ev.confusion[labels[n]][pred];
      if (pred == labels[n]) ++correct;
    }
  }
  ev.oa = double(correct) / double(indices.size());
  ev.loss = loss_sum / double(indices.size());
  return ev;
}

TrainResult train(Model& model, const Dataset& data, const DatasetSplit& split,
                  const TrainConfig& cfg) {
  cfg.validate();
  if (split.train_indices.empty()) throw UsageError("train: empty train set");
  for (auto i : split.train_indices) {
    if (i >= data.size()) throw UsageError("train: split index " + std::to_string(i) + " out of range");
  }
  Rng seeds(cfg.seed);
  const DatasetSplit carve =
      stratified_split(data, split.train_indices, 1.0 - cfg.val_fraction, seeds.next_u64());
  std::vector<std::size_t> fit = carve.train_indices;
  const std::vector<std::size_t>& val = carve.test_indices;
  if (fit.empty() || val.empty()) throw UsageError("train: empty train or validation set");

  Rng order_rng(seeds.next_u64());
  Rng augment_rng(seeds.next_u64());
  Rng dropout_rng(seeds.next_u64());

  ParameterSet& params = model.params();
  AdamState adam;
  EarlyStopping stopper(cfg.patience);
  TrainResult result;
  std::vector<std::vector<float>> best = params.snapshot();

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    order_rng.shuffle(fit);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < fit.size(); start += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, fit.size() - start);
      std::vector<Image> images;
      std::vector<std::size_t> labels;
      for (std::size_t j = start; j < start + n; ++j) {
        images.push_back(augment(data.images[fit[j]], augment_rng, cfg.augment));
        labels.push_back(data.labels[fit[j]]);
      }
      const Tensor logits = model.logits(images_to_tensor(images), Mode::train, &dropout_rng);
      const Tensor loss = softmax_cross_entropy(logits, labels);
      const double lv = loss.item();
      if (!std::isfinite(lv)) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch));
      }
      params.clear_grads();
      backward(loss);
      adam_step(params, adam, cfg.learning_rate, cfg.weight_decay);
      loss_sum += lv * double(n);
    }
    params.clear_grads();

    const Evaluation v = evaluate(model, data, val);
    if (!std::isfinite(v.loss)) {
      throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch));
    }
    result.history.push_back({epoch, loss_sum / double(fit.size()), v.loss, v.oa});
    if (stopper.update(epoch, v.loss)) best = params.snapshot();
    if (stopper.should_stop()) {
      result.early_stopped = epoch < cfg.max_epochs;
      break;
    }
  }
  params.restore(best);
  result.best_epoch = stopper.best_epoch();
  return result;
}

void Metrics::summarize() {
  if (per_split_oa.empty()) throw UsageError("metrics: no splits");
  mean_oa = mean_of(per_split_oa);
  sd_oa = population_sd(per_split_oa);
}

std::string Metrics::render() const { return format_mean_sd(mean_oa, sd_oa); }

std::vector<std::string> Metrics::key_values() const {
  std::vector<std::string> out;
  auto kv = [&](const std::string& key, double value) {
    std::ostringstream s;
    s.precision(17);
    s << key << '=' << value;
    out.push_back(s.str());
  };
  kv("train_ratio", train_ratio);
  kv("mean_oa", mean_oa);
  kv("sd_oa", sd_oa);
  for (std::size_t k = 0; k < per_split_oa.size(); ++k) {
    kv("split" + std::to_string(k) + "_oa", per_split_oa[k]);
  }
  return out;
}

ProtocolResult run_protocol(const Dataset& data, double train_ratio, const ProtocolConfig& cfg) {
  cfg.train.validate();
  if (cfg.n_splits == 0) throw UsageError("protocol: need at least one split");
  data.validate();
  ModelConfig model_cfg = cfg.model;
  model_cfg.n_classes = data.class_count();
  model_cfg.dropout_rate = cfg.train.dropout_rate;
  model_cfg.freeze_backbone = cfg.train.freeze_backbone;
  model_cfg.validate();

  const std::vector<DatasetSplit> splits =
      make_splits(data, train_ratio, cfg.n_splits, cfg.split_seed);
  std::vector<SplitOutcome> outcomes(splits.size());
  std::vector<std::exception_ptr> errors(splits.size());

  auto run_one = [&](std::size_t k) {
    try {
      ModelConfig mc = model_cfg;
      mc.seed = model_cfg.seed + k;
      TrainConfig tc = cfg.train;
      tc.seed = cfg.train.seed + k;
      auto model = assemble_model(mc);
      SplitOutcome& out = outcomes[k];
      out.split = splits[k];
      out.training = train(*model, data, splits[k], tc);
      out.test = evaluate(*model, data, splits[k].test_indices);
      if (cfg.keep_models) out.model = std::move(model);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  };

  const std::size_t jobs = std::max<std::size_t>(1, std::min(cfg.jobs, splits.size()));
  if (jobs == 1) {
    for (std::size_t k = 0; k < splits.size(); ++k) run_one(k);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    for (std::size_t j = 0; j < jobs; ++j) {
      workers.emplace_back([&] {
        for (std::size_t k; (k = next.fetch_add(1)) < splits.size();) run_one(k);
      });
    }
    for (auto& w : workers) w.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  ProtocolResult result;
  result.metrics.train_ratio = train_ratio;
  for (auto& o : outcomes) {
    result.metrics.per_split_oa.push_back(o.test.oa);
    result.metrics.confusion.push_back(o.test.confusion);
  }
  result.metrics.summarize();
  result.splits = std::move(outcomes);
  return result;
}

std::vector<ProtocolResult> run_protocol(const Dataset& data, std::span<const double> ratios,
                                         const ProtocolConfig& cfg) {
  std::vector<ProtocolResult> out;
  for (double r : ratios) out.push_back(run_protocol(data, r, cfg));
  return out;
}

}  // namespace msafeb

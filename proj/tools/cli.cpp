#include "cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <optional>
#include <set>
#include <sstream>

#include "msafeb/checkpoint.hpp"
#include "msafeb/config_file.hpp"
#include "msafeb/data.hpp"
#include "msafeb/errors.hpp"
#include "msafeb/explain.hpp"
#include "msafeb/kernels.hpp"
#include "msafeb/model.hpp"
#include "msafeb/stats.hpp"
#include "msafeb/train.hpp"

namespace msafeb::cli {

namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

// Options that describe how a run is invoked rather than what it computes;
// they are not written to (or replayed from) a manifest.
const std::set<std::string> kNotReplayed{"help", "config", "manifest"};

struct Size2 {
  std::size_t height = 64;
  std::size_t width = 64;
};

Size2 parse_size(const std::string& s) {
  const auto x = s.find('x');
  std::size_t h = 0, w = 0;
  try {
    if (x == std::string::npos) throw std::invalid_argument(s);
    std::size_t used = 0;
    h = std::stoul(s.substr(0, x), &used);
    if (used != x) throw std::invalid_argument(s);
    w = std::stoul(s.substr(x + 1), &used);
    if (used != s.size() - x - 1) throw std::invalid_argument(s);
  } catch (const std::logic_error&) {
    throw UsageError("bad size '" + s + "', expected HxW (e.g. 64x64)");
  }
  if (h == 0 || w == 0) throw UsageError("bad size '" + s + "': extents must be positive");
  return {h, w};
}

std::string fmt(double v, int precision = 17) {
  std::ostringstream s;
  s.imbue(std::locale::classic());
  s.precision(precision);
  s << v;
  return s.str();
}

std::string join(const std::vector<std::string>& v, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? sep : "") + v[i];
  return out;
}

std::string toolchain() {
  std::string s = "msafeb 1.0";
#if defined(__clang__)
  s += "; clang " __clang_version__;
#elif defined(__GNUC__)
  s += "; gcc " __VERSION__;
#endif
  s += "; C++ " + std::to_string(__cplusplus);
  s += "; threads " + std::to_string(kernels::max_threads());
  return s;
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

bool given_on_command_line(const std::vector<std::string>& args, const std::string& name) {
  const std::string flag = "--" + name;
  for (const auto& a : args) {
    if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
  }
  return false;
}

std::string option_value(const CLI::Option* opt) {
  if (opt->count() > 0) return join(opt->results(), ",");
  return opt->get_default_str();
}

/// Fills options not given on the command line from a key=value file (a
/// previous run's manifest or a hand-written config).
void apply_config(CLI::App& sub, const std::vector<std::string>& args, const fs::path& path) {
  const KeyValueConfig kv = KeyValueConfig::load(path);
  if (kv.has("command") && kv.raw("command") != sub.get_name()) {
    throw ConfigError(path.string() + ": manifest is for command '" + kv.raw("command") +
                      "', not '" + sub.get_name() + "'");
  }
  std::set<std::string> known{"command"};
  for (const CLI::Option* opt : sub.get_options()) {
    const std::string name = opt->get_single_name();
    if (!kNotReplayed.count(name)) known.insert(name);
  }
  kv.require_known(known);
  for (const auto& key : kv.keys()) {
    if (key == "command" || given_on_command_line(args, key)) continue;
    CLI::Option* opt = sub.get_option("--" + key);
    opt->clear();
    const std::string& value = kv.raw(key);
    if (opt->get_expected_max() > 1) {
      std::istringstream items(value);
      std::string item;
      while (std::getline(items, item, ',')) opt->add_result(item);
    } else {
      opt->add_result(value);
    }
    opt->run_callback();
  }
}

class Manifest {
 public:
  explicit Manifest(const CLI::App& sub) : sub_(sub), start_(Clock::now()), started_at_(utc_now()) {}

  void note(const std::string& key, const std::string& value) { notes_.emplace_back(key, value); }
  void artifact(const fs::path& p) { artifacts_.push_back(p.string()); }

  void write(const fs::path& path) const {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write manifest " + path.string());
    const double wall = std::chrono::duration<double>(Clock::now() - start_).count();
    out << "# msafeb run manifest. Replay: msafeb " << sub_.get_name() << " --config "
        << path.filename().string() << "\n";
    out << "# started_at=" << started_at_ << "\n";
    out << "# wall_clock_seconds=" << fmt(wall, 6) << "\n";
    out << "# toolchain=" << toolchain() << "\n";
    out << "command=" << sub_.get_name() << "\n";
    for (const CLI::Option* opt : sub_.get_options()) {
      const std::string name = opt->get_single_name();
      if (kNotReplayed.count(name)) continue;
      out << name << "=" << option_value(opt) << "\n";
    }
    for (const auto& [k, v] : notes_) out << "# " << k << "=" << v << "\n";
    for (const auto& a : artifacts_) out << "# artifact=" << a << "\n";
    if (!out) throw FormatError("write failed: " + path.string());
  }

 private:
  const CLI::App& sub_;
  Clock::time_point start_;
  std::string started_at_;
  std::vector<std::pair<std::string, std::string>> notes_;
  std::vector<std::string> artifacts_;
};

void require(const std::string& value, const std::string& flag) {
  if (value.empty()) throw UsageError(flag + " is required");
}

// ---------------------------------------------------------------------------
// synth

struct SynthOptions {
  std::size_t classes = 4;
  std::size_t per_class = 200;
  std::string size = "64x64";
  std::uint64_t seed = 0;
  std::string out;
  bool force = false;
};

void register_synth(CLI::App& sub, SynthOptions& o) {
  sub.add_option("--classes", o.classes, "number of classes");
  sub.add_option("--per-class", o.per_class, "images per class");
  sub.add_option("--size", o.size, "image size HxW");
  sub.add_option("--seed", o.seed, "generator seed")->envname("MSAFEB_SEED");
  sub.add_option("--out", o.out, "output directory (required)");
  sub.add_option("--force", o.force, "allow writing into a non-empty directory");
}

void cmd_synth(const CLI::App& sub, const SynthOptions& o, std::ostream& out) {
  Manifest manifest(sub);
  require(o.out, "--out");
  if (o.classes < 2) throw UsageError("need >= 2 classes, got " + std::to_string(o.classes));
  if (o.per_class < 2) throw UsageError("need >= 2 images per class for stratified splits");
  const Size2 size = parse_size(o.size);
  const fs::path root(o.out);
  if (fs::exists(root) && !fs::is_empty(root) && !o.force) {
    throw UsageError("refusing to write into non-empty directory " + root.string() +
                     " (pass --force true to overwrite)");
  }
  fs::create_directories(root);

  const Dataset data = synth_dataset(o.classes, o.per_class, size.width, size.height, o.seed);
  const auto files = save_image_dataset(data, root);
  std::ofstream boxes(root / "patches.tsv");
  boxes << "# file\tlabel\tx0\ty0\twidth\theight\n";
  for (std::size_t i = 0; i < files.size(); ++i) {
    const Box& b = data.patches[i];
    boxes << files[i].generic_string() << '\t' << data.labels[i] << '\t' << b.x0 << '\t' << b.y0
          << '\t' << b.width << '\t' << b.height << '\n';
  }
  if (!boxes) throw FormatError("write failed: patches.tsv");

  out << "wrote " << files.size() << " images in " << data.class_count() << " classes to "
      << root.string() << "\n";
  out << "images=" << files.size() << "\nclasses=" << data.class_count() << "\n";
  manifest.artifact(root / "patches.tsv");
  manifest.note("layout", "<class>/img_<index>.ppm");
  manifest.write(root / "manifest.txt");
}

// ---------------------------------------------------------------------------
// train / ablate

struct TrainOptions {
  std::string data;
  std::string size = "64x64";
  double ratio = 0.5;
  std::size_t splits = 5;
  bool with_msafeb = true;
  std::uint64_t seed = 0;
  std::string out;
  std::size_t epochs = 50;
  std::size_t patience = 5;
  double lr = 3e-3;
  double weight_decay = 1e-4;
  std::size_t batch_size = 16;
  double dropout = 0.5;
  double val_fraction = 0.1;
  bool augment = true;
  bool hflip = true;
  bool crop = true;
  double crop_fraction = 0.875;
  bool freeze_backbone = false;
  std::size_t jobs = 1;
  std::string model_config;
};

void register_train(CLI::App& sub, TrainOptions& o, bool ablation) {
  sub.add_option("--data", o.data, "dataset root: <root>/<class>/<image>.ppm (required)");
  sub.add_option("--size", o.size, "model input size HxW");
  sub.add_option("--ratio", o.ratio, "training fraction of each class");
  sub.add_option("--splits", o.splits, "number of random stratified splits");
  if (!ablation) sub.add_option("--with-msafeb", o.with_msafeb, "include the attention block");
  sub.add_option("--seed", o.seed, "base seed for splits, initialization and training")
      ->envname("MSAFEB_SEED");
  sub.add_option("--out", o.out, "output directory (required)");
  sub.add_option("--epochs", o.epochs, "maximum epochs");
  sub.add_option("--patience", o.patience, "early-stopping patience on validation loss");
  sub.add_option("--lr", o.lr, "Adam learning rate");
  sub.add_option("--weight-decay", o.weight_decay, "L2 coefficient added to gradients");
  sub.add_option("--batch-size", o.batch_size, "mini-batch size");
  sub.add_option("--dropout", o.dropout, "dropout rate before the classifier");
  sub.add_option("--val-fraction", o.val_fraction, "validation share carved from training data");
  sub.add_option("--augment", o.augment, "enable augmentation");
  sub.add_option("--hflip", o.hflip, "random horizontal flips (off for orientation-coded data)");
  sub.add_option("--crop", o.crop, "random crops resized back to the input size");
  sub.add_option("--crop-fraction", o.crop_fraction, "crop side as a fraction of the image");
  sub.add_option("--freeze-backbone", o.freeze_backbone, "train only the head");
  sub.add_option("--jobs", o.jobs, "splits trained concurrently");
  sub.add_option("--model-config", o.model_config, "key=value model geometry overrides");
}

ProtocolConfig protocol_config(const TrainOptions& o, bool with_msafeb) {
  ProtocolConfig pc;
  if (!o.model_config.empty()) pc.model = read_model_config(KeyValueConfig::load(o.model_config));
  const Size2 size = parse_size(o.size);
  pc.model.backbone.input_height = size.height;
  pc.model.backbone.input_width = size.width;
  pc.model.with_msafeb = with_msafeb;
  pc.model.seed = o.seed;
  pc.split_seed = o.seed;
  pc.n_splits = o.splits;
  pc.jobs = o.jobs;
  pc.keep_models = true;
  TrainConfig& t = pc.train;
  t.seed = o.seed;
  t.max_epochs = o.epochs;
  t.patience = o.patience;
  t.learning_rate = o.lr;
  t.weight_decay = o.weight_decay;
  t.batch_size = o.batch_size;
  t.dropout_rate = static_cast<float>(o.dropout);
  t.val_fraction = o.val_fraction;
  t.augment.enabled = o.augment;
  t.augment.hflip = o.hflip;
  t.augment.random_crop = o.crop;
  t.augment.crop_fraction = o.crop_fraction;
  t.freeze_backbone = o.freeze_backbone;
  if (!(o.ratio > 0.0 && o.ratio < 1.0)) {
    throw UsageError("--ratio must lie in (0, 1), got " + fmt(o.ratio));
  }
  if (!(o.crop_fraction > 0.0 && o.crop_fraction <= 1.0)) {
    throw UsageError("--crop-fraction must lie in (0, 1]");
  }
  return pc;
}

std::string ratio_label(double ratio) {
  const long tr = std::lround(ratio * 100.0);
  return "Tr/Te=" + std::to_string(tr) + "/" + std::to_string(100 - tr);
}

/// Runs the protocol and writes checkpoints, histories and reports to dir.
ProtocolResult train_into(const Dataset& data, const TrainOptions& o, bool with_msafeb,
                          const fs::path& dir, Manifest& manifest, std::ostream& out) {
  ProtocolConfig pc = protocol_config(o, with_msafeb);
  fs::create_directories(dir);
  ProtocolResult r = run_protocol(data, o.ratio, pc);

  ModelConfig resolved = pc.model;
  resolved.n_classes = data.class_count();
  resolved.dropout_rate = pc.train.dropout_rate;
  resolved.freeze_backbone = pc.train.freeze_backbone;
  write_model_config(resolved).save(dir / "model.cfg");
  manifest.artifact(dir / "model.cfg");

  for (std::size_t k = 0; k < r.splits.size(); ++k) {
    const auto& s = r.splits[k];
    const std::string stem = "split" + std::to_string(k);
    save_checkpoint(s.model->params(), dir / (stem + ".ckpt"));
    std::ofstream hist(dir / (stem + "_history.tsv"));
    hist << "epoch\ttrain_loss\tval_loss\tval_oa\n";
    for (const auto& e : s.training.history) {
      hist << e.epoch << '\t' << fmt(e.train_loss) << '\t' << fmt(e.val_loss) << '\t'
           << fmt(e.val_oa) << '\n';
    }
    std::ofstream test(dir / (stem + "_test.txt"));
    for (auto i : s.split.test_indices) test << i << '\n';
    if (!hist || !test) throw FormatError("write failed in " + dir.string());
    manifest.artifact(dir / (stem + ".ckpt"));
    manifest.note(stem + "_seeds", "split=" + std::to_string(s.split.seed) +
                                       " model=" + std::to_string(pc.model.seed + k) +
                                       " train=" + std::to_string(pc.train.seed + k));
    manifest.note(stem + "_best_epoch", std::to_string(s.training.best_epoch));
  }

  std::ostringstream human;
  human << (with_msafeb ? "with MSAFEB" : "without MSAFEB") << ", " << ratio_label(o.ratio)
        << ", " << r.splits.size() << " split(s)\n";
  for (std::size_t k = 0; k < r.splits.size(); ++k) {
    const auto& s = r.splits[k];
    human << "  split " << k << ": OA " << std::fixed << std::setprecision(2)
          << 100.0 * s.test.oa << " %  (best epoch " << s.training.best_epoch << " of "
          << s.training.history.size() << ")\n";
  }
  human << "  OA " << r.metrics.render() << "  (mean % \xC2\xB1 population SD)\n";
  std::ofstream report(dir / "report.txt");
  report << human.str();
  std::ofstream kv(dir / "metrics.kv");
  for (const auto& line : r.metrics.key_values()) kv << line << '\n';
  if (!report || !kv) throw FormatError("write failed in " + dir.string());
  manifest.artifact(dir / "report.txt");
  manifest.artifact(dir / "metrics.kv");
  out << human.str();
  return r;
}

void cmd_train(const CLI::App& sub, const TrainOptions& o, std::ostream& out) {
  Manifest manifest(sub);
  require(o.data, "--data");
  require(o.out, "--out");
  const Size2 size = parse_size(o.size);
  const Dataset data = load_image_dataset(o.data, size.width, size.height);
  const fs::path dir(o.out);
  const ProtocolResult r = train_into(data, o, o.with_msafeb, dir, manifest, out);
  for (const auto& line : r.metrics.key_values()) out << line << "\n";
  manifest.write(dir / "manifest.txt");
}

void cmd_ablate(const CLI::App& sub, const TrainOptions& o, std::ostream& out) {
  Manifest manifest(sub);
  require(o.data, "--data");
  require(o.out, "--out");
  const Size2 size = parse_size(o.size);
  const Dataset data = load_image_dataset(o.data, size.width, size.height);
  const fs::path dir(o.out);
  const ProtocolResult with = train_into(data, o, true, dir / "with", manifest, out);
  const ProtocolResult without = train_into(data, o, false, dir / "without", manifest, out);

  std::ostringstream table;
  table << std::fixed << std::setprecision(2);
  table << ratio_label(o.ratio) << "   w/ MSAFEB        w/o MSAFEB\n";
  for (std::size_t k = 0; k < with.metrics.per_split_oa.size(); ++k) {
    table << "split " << std::setw(2) << k << "       " << std::setw(6)
          << 100.0 * with.metrics.per_split_oa[k] << "           " << std::setw(6)
          << 100.0 * without.metrics.per_split_oa[k] << "\n";
  }
  table << "mean \xC2\xB1 SD    " << with.metrics.render() << "    " << without.metrics.render()
        << "\n";
  std::ofstream f(dir / "ablation.txt");
  f << table.str();
  out << table.str();

  std::vector<std::string> kv;
  for (const auto& [prefix, m] : {std::pair{"with_", &with.metrics}, {"without_", &without.metrics}}) {
    kv.push_back(std::string(prefix) + "mean_oa=" + fmt(m->mean_oa));
    kv.push_back(std::string(prefix) + "sd_oa=" + fmt(m->sd_oa));
    for (std::size_t k = 0; k < m->per_split_oa.size(); ++k) {
      kv.push_back(std::string(prefix) + "split" + std::to_string(k) + "_oa=" +
                   fmt(m->per_split_oa[k]));
    }
  }
  kv.push_back("delta_mean_oa=" + fmt(with.metrics.mean_oa - without.metrics.mean_oa));
  std::ofstream kvf(dir / "ablation.kv");
  for (const auto& line : kv) {
    out << line << "\n";
    kvf << line << "\n";
  }
  if (!f || !kvf) throw FormatError("write failed in " + dir.string());
  manifest.artifact(dir / "ablation.txt");
  manifest.artifact(dir / "ablation.kv");
  manifest.write(dir / "manifest.txt");
}

// ---------------------------------------------------------------------------
// params

struct ParamsOptions {
  std::string config;
  std::string preset;
  std::string manifest;
};

void cmd_params(const CLI::App& sub, const ParamsOptions& o, std::ostream& out) {
  Manifest manifest(sub);
  KeyValueConfig kv;
  if (!o.config.empty()) {
    kv = KeyValueConfig::load(o.config);
    kv.require_known(msafeb_config_keys());
  }
  if (!o.preset.empty()) kv.set("preset", o.preset);
  const MsafebConfig cfg = read_msafeb_config(kv);
  const ParamBreakdown analytic = param_count(cfg);

  ParameterSet params;
  Rng rng(0);
  MsafebBlock block(cfg, params, "msafeb", rng);
  const std::size_t enumerated = params.learnable_scalars();

  out << "block geometry: K=" << cfg.input_channels << ", kernels " << join_sizes(cfg.branch_kernels)
      << ", filters " << cfg.branch_filters << ", dilation " << cfg.branch_dilation << ", groups "
      << cfg.branch_groups << ", rates " << join_sizes(cfg.aspp_rates) << ", fusion "
      << cfg.fusion_channels << ", attention " << to_string(cfg.attention.variant) << "\n";
  for (const auto& [name, count] : analytic.rows()) {
    out << "  " << std::left << std::setw(16) << name << std::right << std::setw(12) << count << "\n";
  }
  out << "  " << std::left << std::setw(16) << "total" << std::right << std::setw(12)
      << analytic.total() << "\n";
  out << "feature_length=" << cfg.feature_length() << "\n";
  for (const auto& [name, count] : analytic.rows()) out << "params_" << name << "=" << count << "\n";
  out << "analytic_total=" << analytic.total() << "\n";
  out << "enumerated_total=" << enumerated << "\n";
  if (cfg.input_channels == 1920) {
    constexpr double reference = 34.9e6 - 18.1e6;
    out << "reference_block_delta=" << fmt(reference, 9) << "\n";
    out << "note: reference block delta is 16.8 M (34.9 M with the block, 18.1 M without); this "
           "block has "
        << std::fixed << std::setprecision(2) << analytic.total() / 1e6
        << " M. The attention stage is a stand-in, so the counts are not expected to agree.\n";
  }
  if (enumerated != analytic.total()) {
    throw NumericError("parameter audit failed: analytic " + std::to_string(analytic.total()) +
                       " != enumerated " + std::to_string(enumerated));
  }
  out << "audit=ok\n";
  if (!o.manifest.empty()) manifest.write(o.manifest);
}

// ---------------------------------------------------------------------------
// gradcam

struct GradCamOptions {
  std::string checkpoint;
  std::string model_config;
  std::string image;
  std::size_t target_class = 0;
  std::string layer = "E";
  std::string out;
  std::string raw_map;
  std::string manifest;
};

void cmd_gradcam(const CLI::App& sub, const GradCamOptions& o, std::ostream& out) {
  Manifest manifest(sub);
  require(o.checkpoint, "--checkpoint");
  require(o.image, "--image");
  require(o.out, "--out");
  const fs::path ckpt(o.checkpoint);
  const fs::path cfg_path =
      o.model_config.empty() ? ckpt.parent_path() / "model.cfg" : fs::path(o.model_config);
  auto model = assemble_model(read_model_config(KeyValueConfig::load(cfg_path)));
  load_checkpoint(model->params(), ckpt);
  const Image image = read_ppm(o.image);

  const GradCamMap map = grad_cam(*model, image, o.target_class, o.layer);
  const fs::path out_path(o.out);
  const fs::path raw = o.raw_map.empty() ? fs::path(out_path).replace_extension(".msft")
                                         : fs::path(o.raw_map);
  render_heatmap(map, image, out_path, raw);

  const Image resized = image.width == model->config().backbone.input_width &&
                                image.height == model->config().backbone.input_height
                            ? image
                            : resize_bilinear(image, model->config().backbone.input_width,
                                              model->config().backbone.input_height);
  const Image batch[1] = {resized};
  Tensor logits;
  {
    NoGradGuard no_grad;
    logits = model->logits(images_to_tensor(batch), Mode::eval);
  }
  const auto probs = softmax_rows(logits);
  out << "Grad-CAM for class " << o.target_class << " at stage " << o.layer << " ("
      << map.height << "x" << map.width << " map) written to " << out_path.string() << "\n";
  out << "target_class=" << o.target_class << "\nlayer=" << o.layer << "\n";
  out << "map_height=" << map.height << "\nmap_width=" << map.width << "\n";
  out << "predicted_class=" << argmax(logits.data()) << "\n";
  for (std::size_t c = 0; c < probs.size(); ++c) out << "prob" << c << "=" << fmt(probs[c], 9) << "\n";
  out << "overlay=" << out_path.string() << "\nraw_map=" << raw.string() << "\n";
  manifest.artifact(out_path);
  manifest.artifact(raw);
  manifest.write(o.manifest.empty() ? fs::path(o.out + ".manifest.txt") : fs::path(o.manifest));
}

// ---------------------------------------------------------------------------
// ttest

struct TTestOptions {
  std::string a;
  std::string b;
  std::string manifest;
};

std::vector<double> read_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  std::vector<double> values;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos || line[b] == '#') continue;
    std::istringstream s(line);
    s.imbue(std::locale::classic());
    double v = 0.0;
    std::string rest;
    if (!(s >> v) || (s >> rest)) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": not a number: '" + line + "'");
    }
    values.push_back(v);
  }
  return values;
}

void cmd_ttest(const CLI::App& sub, const TTestOptions& o, std::ostream& out) {
  Manifest manifest(sub);
  require(o.a, "--a");
  require(o.b, "--b");
  const auto a = read_values(o.a);
  const auto b = read_values(o.b);
  for (const auto& [name, v] : {std::pair{o.a, &a}, {o.b, &b}}) {
    if (v->size() < 2) {
      throw UsageError("need >= 2 observations in " + name + ", got " + std::to_string(v->size()));
    }
  }
  const WelchResult r = welch_t_test(a, b);
  out << "Welch two-sample t-test: n_a=" << a.size() << ", n_b=" << b.size() << "\n";
  out << "t=" << fmt(r.t_statistic, 12) << "\n";
  out << "df=" << fmt(r.degrees_of_freedom, 12) << "\n";
  out << "p=" << fmt(r.p_value, 12) << "\n";
  if (!o.manifest.empty()) manifest.write(o.manifest);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-scale attention feature extraction: experiments and tools", "msafeb"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  SynthOptions synth;
  TrainOptions train, ablate;
  ParamsOptions params;
  GradCamOptions gradcam;
  TTestOptions ttest;
  std::string config_path;

  auto* s_synth = app.add_subcommand("synth", "generate the synthetic oriented-grating dataset");
  register_synth(*s_synth, synth);
  auto* s_train = app.add_subcommand("train", "train and evaluate over random splits");
  register_train(*s_train, train, false);
  auto* s_ablate = app.add_subcommand("ablate", "paired runs with and without the block");
  register_train(*s_ablate, ablate, true);
  auto* s_params = app.add_subcommand("params", "parameter audit of a block configuration");
  s_params->add_option("--config", params.config, "key=value block configuration");
  s_params->add_option("--preset", params.preset, "desk or full (overrides the file)");
  s_params->add_option("--manifest", params.manifest, "write a run manifest here");
  auto* s_gradcam = app.add_subcommand("gradcam", "Grad-CAM overlay for one image");
  s_gradcam->add_option("--checkpoint", gradcam.checkpoint, "trained checkpoint (required)");
  s_gradcam->add_option("--model-config", gradcam.model_config,
                        "model.cfg (default: next to the checkpoint)");
  s_gradcam->add_option("--image", gradcam.image, "PPM image (required)");
  s_gradcam->add_option("--class", gradcam.target_class, "target class index");
  s_gradcam->add_option("--layer", gradcam.layer, "stage name: I, C<i>, D<i> or E");
  s_gradcam->add_option("--out", gradcam.out, "overlay PPM path (required)");
  s_gradcam->add_option("--raw-map", gradcam.raw_map, "raw map feature file (default: <out>.msft)");
  s_gradcam->add_option("--manifest", gradcam.manifest, "manifest path (default: <out>.manifest.txt)");
  auto* s_ttest = app.add_subcommand("ttest", "Welch two-sample t-test on two OA lists");
  s_ttest->add_option("--a", ttest.a, "file with one value per line (required)");
  s_ttest->add_option("--b", ttest.b, "file with one value per line (required)");
  s_ttest->add_option("--manifest", ttest.manifest, "write a run manifest here");

  for (auto* sub : {s_synth, s_train, s_ablate, s_gradcam, s_ttest}) {
    sub->add_option("--config", config_path, "replay a manifest or key=value file");
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? ExitCode::ok : ExitCode::usage;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    if (!config_path.empty()) apply_config(*sub, args, config_path);
    if (sub == s_synth) cmd_synth(*sub, synth, out);
    else if (sub == s_train) cmd_train(*sub, train, out);
    else if (sub == s_ablate) cmd_ablate(*sub, ablate, out);
    else if (sub == s_params) cmd_params(*sub, params, out);
    else if (sub == s_gradcam) cmd_gradcam(*sub, gradcam, out);
    else cmd_ttest(*sub, ttest, out);
    return ExitCode::ok;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return ExitCode::usage;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return ExitCode::usage;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return ExitCode::data;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return ExitCode::data;
  } catch (const NumericError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return ExitCode::numeric;
  }
}

}  // namespace msafeb::cli

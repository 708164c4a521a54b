#include "msafeb/config_file.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "msafeb/errors.hpp"

namespace msafeb {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
bool parse_integer(const std::string& s, T& out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && !s.empty();
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(std::istream& in, const std::string& source) {
  KeyValueConfig kv;
  kv.source_ = source;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key=value, got '" +
                        line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
    if (kv.has(key)) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
    kv.set(key, trim(line.substr(eq + 1)));
    kv.lines_[key] = lineno;
  }
  return kv;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config " + path.string());
  return parse(in, path.string());
}

void KeyValueConfig::set(const std::string& key, std::string value) {
  if (!has(key)) order_.push_back(key);
  values_[key] = std::move(value);
}

const std::string& KeyValueConfig::raw(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(source_ + ": missing key '" + key + "'");
  return it->second;
}

std::string KeyValueConfig::where(const std::string& key) const {
  auto it = lines_.find(key);
  return source_ + (it == lines_.end() ? "" : ":" + std::to_string(it->second)) + ": ";
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
  return has(key) ? raw(key) : fallback;
}

std::size_t KeyValueConfig::get_size(const std::string& key, std::size_t fallback) const {
  if (!has(key)) return fallback;
  std::size_t v = 0;
  if (!parse_integer(raw(key), v)) {
    throw ConfigError(where(key) + "key '" + key + "': expected a non-negative integer, got '" +
                      raw(key) + "'");
  }
  return v;
}

std::uint64_t KeyValueConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
  if (!has(key)) return fallback;
  std::uint64_t v = 0;
  if (!parse_integer(raw(key), v)) {
    throw ConfigError(where(key) + "key '" + key + "': expected an unsigned integer, got '" +
                      raw(key) + "'");
  }
  return v;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  if (!has(key)) return fallback;
  const std::string& s = raw(key);
  std::istringstream in(s);
  in.imbue(std::locale::classic());
  double v = 0.0;
  if (!(in >> v) || !in.eof()) {
    throw ConfigError(where(key) + "key '" + key + "': expected a number, got '" + s + "'");
  }
  return v;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string& s = raw(key);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError(where(key) + "key '" + key + "': expected true/false, got '" + s + "'");
}

std::vector<std::size_t> KeyValueConfig::get_sizes(const std::string& key,
                                                   const std::vector<std::size_t>& fallback) const {
  if (!has(key)) return fallback;
  std::vector<std::size_t> out;
  std::istringstream in(raw(key));
  std::string item;
  while (std::getline(in, item, ',')) {
    std::size_t v = 0;
    if (!parse_integer(trim(item), v)) {
      throw ConfigError(where(key) + "key '" + key + "': bad list element '" + item + "'");
    }
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError(where(key) + "key '" + key + "': empty list");
  return out;
}

void KeyValueConfig::require_known(const std::set<std::string>& known) const {
  for (const auto& k : order_) {
    if (!known.count(k)) throw ConfigError(where(k) + "unknown key '" + k + "'");
  }
}

void KeyValueConfig::write(std::ostream& out) const {
  for (const auto& k : order_) out << k << '=' << values_.at(k) << '\n';
}

void KeyValueConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  write(out);
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

namespace {

std::string fmt(double v) {
  std::ostringstream s;
  s.imbue(std::locale::classic());
  s.precision(9);
  s << v;
  return s.str();
}

}  // namespace

std::set<std::string> msafeb_config_keys(const std::string& prefix) {
  std::set<std::string> keys;
  for (const char* k : {"preset", "input_channels", "branch_kernels", "branch_filters",
                        "branch_dilation", "branch_groups", "aspp_rates", "aspp_branch_channels",
                        "fusion_channels", "attention", "reduction_ratio", "spatial_kernel",
                        "bn_momentum", "bn_eps"}) {
    keys.insert(prefix + k);
  }
  return keys;
}

MsafebConfig read_msafeb_config(const KeyValueConfig& kv, const std::string& p) {
  const std::string preset = kv.get_string(p + "preset", "desk");
  MsafebConfig c;
  if (preset == "desk") {
    c = MsafebConfig::desk(kv.get_size(p + "input_channels", 64));
  } else if (preset != "full") {
    throw ConfigError("unknown preset '" + preset + "' (expected desk or full)");
  }
  c.input_channels = kv.get_size(p + "input_channels", c.input_channels);
  c.branch_kernels = kv.get_sizes(p + "branch_kernels", c.branch_kernels);
  c.branch_filters = kv.get_size(p + "branch_filters", c.branch_filters);
  c.branch_dilation = kv.get_size(p + "branch_dilation", c.branch_dilation);
  c.branch_groups = kv.get_size(p + "branch_groups", c.branch_groups);
  c.aspp_rates = kv.get_sizes(p + "aspp_rates", c.aspp_rates);
  c.aspp_branch_channels = kv.get_size(p + "aspp_branch_channels", c.aspp_branch_channels);
  c.fusion_channels = kv.get_size(p + "fusion_channels", c.fusion_channels);
  if (kv.has(p + "attention")) c.attention.variant = parse_attention_variant(kv.raw(p + "attention"));
  c.attention.reduction_ratio = kv.get_size(p + "reduction_ratio", c.attention.reduction_ratio);
  c.attention.spatial_kernel = kv.get_size(p + "spatial_kernel", c.attention.spatial_kernel);
  c.bn_momentum = static_cast<float>(kv.get_double(p + "bn_momentum", c.bn_momentum));
  c.bn_eps = static_cast<float>(kv.get_double(p + "bn_eps", c.bn_eps));
  c.validate();
  return c;
}

void write_msafeb_config(const MsafebConfig& c, KeyValueConfig& kv, const std::string& p) {
  kv.set(p + "input_channels", std::to_string(c.input_channels));
  kv.set(p + "branch_kernels", join_sizes(c.branch_kernels));
  kv.set(p + "branch_filters", std::to_string(c.branch_filters));
  kv.set(p + "branch_dilation", std::to_string(c.branch_dilation));
  kv.set(p + "branch_groups", std::to_string(c.branch_groups));
  kv.set(p + "aspp_rates", join_sizes(c.aspp_rates));
  kv.set(p + "aspp_branch_channels", std::to_string(c.aspp_branch_channels));
  kv.set(p + "fusion_channels", std::to_string(c.fusion_channels));
  kv.set(p + "attention", to_string(c.attention.variant));
  kv.set(p + "reduction_ratio", std::to_string(c.attention.reduction_ratio));
  kv.set(p + "spatial_kernel", std::to_string(c.attention.spatial_kernel));
  kv.set(p + "bn_momentum", fmt(c.bn_momentum));
  kv.set(p + "bn_eps", fmt(c.bn_eps));
}

ModelConfig read_model_config(const KeyValueConfig& kv) {
  std::set<std::string> known = msafeb_config_keys("msafeb.");
  for (const char* k : {"backbone.stage_channels", "backbone.out_channels", "backbone.input_height",
                        "backbone.input_width", "backbone.bn_momentum", "backbone.bn_eps",
                        "n_classes", "with_msafeb", "dropout_rate", "freeze_backbone", "seed"}) {
    known.insert(k);
  }
  kv.require_known(known);
  ModelConfig c;
  c.backbone.stage_channels = kv.get_sizes("backbone.stage_channels", c.backbone.stage_channels);
  c.backbone.out_channels = kv.get_size("backbone.out_channels", c.backbone.out_channels);
  c.backbone.input_height = kv.get_size("backbone.input_height", c.backbone.input_height);
  c.backbone.input_width = kv.get_size("backbone.input_width", c.backbone.input_width);
  c.backbone.bn_momentum = static_cast<float>(kv.get_double("backbone.bn_momentum", c.backbone.bn_momentum));
  c.backbone.bn_eps = static_cast<float>(kv.get_double("backbone.bn_eps", c.backbone.bn_eps));
  c.n_classes = kv.get_size("n_classes", c.n_classes);
  c.with_msafeb = kv.get_bool("with_msafeb", c.with_msafeb);
  c.dropout_rate = static_cast<float>(kv.get_double("dropout_rate", c.dropout_rate));
  c.freeze_backbone = kv.get_bool("freeze_backbone", c.freeze_backbone);
  c.seed = kv.get_u64("seed", c.seed);
  if (c.with_msafeb) c.msafeb = read_msafeb_config(kv, "msafeb.");
  c.validate();
  return c;
}

KeyValueConfig write_model_config(const ModelConfig& c) {
  KeyValueConfig kv;
  kv.set("backbone.stage_channels", join_sizes(c.backbone.stage_channels));
  kv.set("backbone.out_channels", std::to_string(c.backbone.out_channels));
  kv.set("backbone.input_height", std::to_string(c.backbone.input_height));
  kv.set("backbone.input_width", std::to_string(c.backbone.input_width));
  kv.set("backbone.bn_momentum", fmt(c.backbone.bn_momentum));
  kv.set("backbone.bn_eps", fmt(c.backbone.bn_eps));
  kv.set("n_classes", std::to_string(c.n_classes));
  kv.set("with_msafeb", c.with_msafeb ? "true" : "false");
  kv.set("dropout_rate", fmt(c.dropout_rate));
  kv.set("freeze_backbone", c.freeze_backbone ? "true" : "false");
  kv.set("seed", std::to_string(c.seed));
  if (c.with_msafeb) write_msafeb_config(c.msafeb, kv, "msafeb.");
  return kv;
}

}  // namespace msafeb

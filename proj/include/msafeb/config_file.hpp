#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "msafeb/model.hpp"

namespace msafeb {

/// Flat key=value text. '#' starts a comment; blank lines are ignored.
/// Parse and conversion errors carry "source:line:".
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::istream& in, const std::string& source);
  static KeyValueConfig load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, std::string value);
  const std::string& raw(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::size_t get_size(const std::string& key, std::size_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::size_t> get_sizes(const std::string& key,
                                     const std::vector<std::size_t>& fallback) const;

  /// Throws ConfigError naming the line of the first key not in `known`.
  void require_known(const std::set<std::string>& known) const;

  /// Keys in first-seen order.
  const std::vector<std::string>& keys() const { return order_; }
  void write(std::ostream& out) const;
  void save(const std::filesystem::path& path) const;

 private:
  std::string where(const std::string& key) const;

  std::string source_ = "<config>";
  std::map<std::string, std::string> values_;
  std::map<std::string, std::size_t> lines_;
  std::vector<std::string> order_;
};

std::string join_sizes(const std::vector<std::size_t>& v);

/// Block geometry. "preset" (desk | full, default desk) selects the base;
/// other keys under `prefix` override individual fields.
MsafebConfig read_msafeb_config(const KeyValueConfig& kv, const std::string& prefix = "");
void write_msafeb_config(const MsafebConfig& cfg, KeyValueConfig& kv, const std::string& prefix = "");
std::set<std::string> msafeb_config_keys(const std::string& prefix = "");

ModelConfig read_model_config(const KeyValueConfig& kv);
KeyValueConfig write_model_config(const ModelConfig& cfg);

}  // namespace msafeb

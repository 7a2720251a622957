#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>

namespace ldpo {

/// Flat `key = value` settings in TOML style: '#' comments, optional
/// double-quoted strings, and `[section]` headers that prefix the following
/// keys with "section.".
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::string_view text, const std::string& source = "<config>");
  static KeyValueConfig load(const std::filesystem::path& path);

  bool contains(const std::string& key) const { return values_.contains(key); }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

  std::optional<std::string> get(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::size_t get_size(const std::string& key, std::size_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  /// Keys present in the file but not in `known`.
  std::set<std::string> unknown_keys(const std::set<std::string>& known) const;

  /// Relative paths in values are resolved against this directory.
  const std::filesystem::path& base_dir() const { return base_dir_; }
  std::filesystem::path get_path(const std::string& key) const;

 private:
  std::string source_;
  std::filesystem::path base_dir_;
  std::map<std::string, std::string> values_;
};

}  // namespace ldpo

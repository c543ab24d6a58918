#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace gddpg {

/// Flat `key = value` configuration with `#` comments.
///
/// Values are stored as text and converted on access. Every successful
/// lookup marks the key as consumed so that `unknown_keys()` can report
/// typos after a loader has pulled everything it understands.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig parse(const std::string& text, const std::string& origin = "<string>");
  static KeyValueConfig load(const std::filesystem::path& path);

  bool contains(const std::string& key) const;
  void set(const std::string& key, const std::string& value);

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  long get_long(const std::string& key, long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;
  std::vector<int> get_ints(const std::string& key, const std::vector<int>& fallback) const;

  std::vector<std::string> unknown_keys() const;
  const std::map<std::string, std::string>& entries() const { return entries_; }
  const std::string& origin() const { return origin_; }

 private:
  const std::string* lookup(const std::string& key) const;

  std::map<std::string, std::string> entries_;
  mutable std::set<std::string> consumed_;
  std::string origin_;
};

}  // namespace gddpg

#include "gddpg/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "gddpg/errors.hpp"

namespace gddpg {
namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return {};
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> items;
  std::string item;
  std::istringstream in(value);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) items.push_back(item);
  }
  return items;
}

double to_double(const std::string& key, const std::string& text) {
  double value = 0.0;
  const auto* first = text.data();
  const auto* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    throw ConfigError("key '" + key + "': expected a number, got '" + text + "'");
  }
  return value;
}

long to_long(const std::string& key, const std::string& text) {
  long value = 0;
  const auto* first = text.data();
  const auto* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    // Accept integral values written in scientific notation, e.g. 1e6.
    const double d = to_double(key, text);
    if (d != static_cast<double>(static_cast<long>(d))) {
      throw ConfigError("key '" + key + "': expected an integer, got '" + text + "'");
    }
    return static_cast<long>(d);
  }
  return value;
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(const std::string& text, const std::string& origin) {
  KeyValueConfig config;
  config.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_number) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError(origin + ":" + std::to_string(line_number) + ": empty key");
    }
    if (config.entries_.count(key) != 0) {
      throw ConfigError(origin + ":" + std::to_string(line_number) + ": duplicate key '" + key + "'");
    }
    config.entries_[key] = value;
  }
  return config;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str(), path.string());
}

bool KeyValueConfig::contains(const std::string& key) const { return entries_.count(key) != 0; }

void KeyValueConfig::set(const std::string& key, const std::string& value) { entries_[key] = value; }

const std::string* KeyValueConfig::lookup(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return nullptr;
  consumed_.insert(key);
  return &it->second;
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
  const auto* value = lookup(key);
  return value ? *value : fallback;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  const auto* value = lookup(key);
  return value ? to_double(key, *value) : fallback;
}

int KeyValueConfig::get_int(const std::string& key, int fallback) const {
  return static_cast<int>(get_long(key, fallback));
}

long KeyValueConfig::get_long(const std::string& key, long fallback) const {
  const auto* value = lookup(key);
  return value ? to_long(key, *value) : fallback;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  const auto* value = lookup(key);
  if (!value) return fallback;
  if (*value == "true" || *value == "1" || *value == "yes") return true;
  if (*value == "false" || *value == "0" || *value == "no") return false;
  throw ConfigError("key '" + key + "': expected a boolean, got '" + *value + "'");
}

std::vector<double> KeyValueConfig::get_doubles(const std::string& key,
                                                const std::vector<double>& fallback) const {
  const auto* value = lookup(key);
  if (!value) return fallback;
  std::vector<double> out;
  for (const auto& item : split_list(*value)) out.push_back(to_double(key, item));
  return out;
}

std::vector<int> KeyValueConfig::get_ints(const std::string& key,
                                          const std::vector<int>& fallback) const {
  const auto* value = lookup(key);
  if (!value) return fallback;
  std::vector<int> out;
  for (const auto& item : split_list(*value)) out.push_back(static_cast<int>(to_long(key, item)));
  return out;
}

std::vector<std::string> KeyValueConfig::unknown_keys() const {
  std::vector<std::string> unknown;
  for (const auto& [key, value] : entries_) {
    if (consumed_.count(key) == 0) unknown.push_back(key);
  }
  return unknown;
}

}  // namespace gddpg

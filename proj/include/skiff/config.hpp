#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "skiff/common.hpp"

namespace skiff {

// Flat key = value configuration, one pair per line, # starts a comment.
// Command-line flags override file values; flag names mirror keys.
class Config {
 public:
  Config() = default;

  static Config from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config: " + path);
    Config cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      auto eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw UsageError(path + ":" + std::to_string(lineno) +
                         ": expected key = value");
      std::string key = trim(trimmed.substr(0, eq));
      std::string value = trim(trimmed.substr(eq + 1));
      if (key.empty())
        throw UsageError(path + ":" + std::to_string(lineno) + ": empty key");
      cfg.values_[key] = value;
    }
    return cfg;
  }

  void set(const std::string& key, const std::string& value) {
    values_[key] = value;
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string str(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  std::uint64_t u64(const std::string& key, std::uint64_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      return std::stoull(it->second);
    } catch (const std::exception&) {
      throw UsageError("config key '" + key + "' is not an integer: " +
                       it->second);
    }
  }

  std::int64_t i64(const std::string& key, std::int64_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      return std::stoll(it->second);
    } catch (const std::exception&) {
      throw UsageError("config key '" + key + "' is not an integer: " +
                       it->second);
    }
  }

  double number(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      return std::stod(it->second);
    } catch (const std::exception&) {
      throw UsageError("config key '" + key + "' is not a number: " +
                       it->second);
    }
  }

  bool flag(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const std::string& v = it->second;
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw UsageError("config key '" + key + "' is not a boolean: " + v);
  }

  const std::map<std::string, std::string>& values() const { return values_; }

  std::string serialize() const {
    std::ostringstream os;
    for (const auto& [k, v] : values_) os << k << " = " << v << "\n";
    return os.str();
  }

 private:
  static std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace skiff

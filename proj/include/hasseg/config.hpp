#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace hasseg {

/// Flat `key = value` configuration with dotted keys (e.g. `train.learning_rate`).
///
/// Lines are trimmed; blank lines and lines starting with `#` are ignored.
/// Typed getters parse strictly and throw ConfigError naming the key. Every key
/// read through a getter is marked as consumed so callers can reject typos.
class Config {
 public:
  static Config parse(const std::string& text, const std::string& origin = "config");
  static Config load(const std::string& path);

  void set(const std::string& key, const std::string& value);
  bool contains(const std::string& key) const { return values_.count(key) != 0; }
  /// Copies every entry of `other` over this one.
  void merge(const Config& other);

  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;

  /// Keys that were set but never read.
  std::vector<std::string> unconsumed() const;
  /// Throws ConfigError if any key was never read.
  void require_all_consumed() const;

  const std::map<std::string, std::string>& entries() const { return values_; }
  /// Canonical text form: sorted `key = value` lines.
  std::string str() const;

 private:
  const std::string* find(const std::string& key) const;

  std::map<std::string, std::string> values_;
  mutable std::set<std::string> consumed_;
};

/// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);

}  // namespace hasseg

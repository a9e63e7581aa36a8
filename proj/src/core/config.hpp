#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace arpo {

// Flat `key = value` configuration. Lines starting with '#' are comments and a
// later assignment of the same key overrides an earlier one, so overrides can
// be appended to a base file.
class KvConfig {
 public:
  static KvConfig parse(const std::string& text);
  static KvConfig load(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  // Integer set written as a comma list with inclusive ranges: "0-3,8,10-11".
  std::vector<int> get_int_list(const std::string& key,
                                const std::vector<int>& fallback) const;

  // Keys never read through a getter; used to reject typos after all
  // consumers have parsed their sections.
  std::vector<std::string> unconsumed_keys() const;

  std::string to_string() const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
  mutable std::map<std::string, bool> consumed_;
};

std::vector<int> parse_int_list(const std::string& text);
std::string format_int_list(const std::vector<int>& values);
// Shortest round-trip decimal form of a double.
std::string format_double(double v);

}  // namespace arpo

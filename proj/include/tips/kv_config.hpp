#pragma once

// key = value text files. '#' starts a comment; blank lines are ignored;
// later keys override earlier ones.

#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace tips {

class KvConfig {
public:
  KvConfig() = default;

  static KvConfig parse(std::string_view text, const std::string& origin = "<string>");
  static KvConfig load(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::string& get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  double get_double_or(const std::string& key, double fallback) const;
  long long get_int(const std::string& key) const;
  long long get_int_or(const std::string& key, long long fallback) const;
  bool get_bool_or(const std::string& key, bool fallback) const;
  /// Comma- or whitespace-separated list of reals.
  std::vector<double> get_doubles(const std::string& key) const;

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  const std::map<std::string, std::string>& values() const { return values_; }

  /// Throws InvalidInput naming the first key not in `allowed`.
  void require_known(const std::set<std::string>& allowed) const;

  std::string dump() const;

private:
  std::string origin_;
  std::map<std::string, std::string> values_;
};

}  // namespace tips

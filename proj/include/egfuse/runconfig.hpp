// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "egfuse/errors.hpp"

namespace egfuse {

/// Flat `key = value` configuration with `#` comments. Keys are consumed via
/// typed getters; anything not in the allowed set is rejected by name.
class RunConfig {
public:
  static RunConfig parse_file(const std::string& path);
  static RunConfig parse_string(const std::string& text, const std::string& origin = "<string>");

  bool has(const std::string& key) const;

  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  int64_t get_int(const std::string& key) const;
  int64_t get_int(const std::string& key, int64_t fallback) const;
  uint64_t get_uint(const std::string& key, uint64_t fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<int> get_int_list(const std::string& key, const std::vector<int>& fallback) const;
  std::vector<double> get_double_list(const std::string& key,
                                      const std::vector<double>& fallback) const;

  /// Throws ConfigError naming every key outside `allowed`.
  void require_known(const std::set<std::string>& allowed) const;

  /// The raw text the config was parsed from (canonical input for run ids).
  const std::string& text() const { return text_; }

  const std::map<std::string, std::string>& entries() const { return entries_; }

private:
  std::string text_;
  std::string origin_;
  std::map<std::string, std::string> entries_;
};

}  // namespace egfuse

// SPDX-License-Identifier: Apache-2.0
#include "egfuse/runconfig.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

namespace egfuse {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

}  // namespace

RunConfig RunConfig::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_string(ss.str(), path);
}

RunConfig RunConfig::parse_string(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  cfg.text_ = text;
  cfg.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    }
    if (!cfg.entries_.emplace(key, value).second) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key " + key);
    }
  }
  return cfg;
}

bool RunConfig::has(const std::string& key) const { return entries_.count(key) != 0; }

std::string RunConfig::get_string(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError("config: missing required key " + key);
  return it->second;
}

std::string RunConfig::get_string(const std::string& key, const std::string& fallback) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? fallback : it->second;
}

namespace {

int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const int64_t out = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: key " + key + " expects an integer, got '" + v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: key " + key + " expects a number, got '" + v + "'");
  }
}

}  // namespace

int64_t RunConfig::get_int(const std::string& key) const { return parse_int(key, get_string(key)); }

int64_t RunConfig::get_int(const std::string& key, int64_t fallback) const {
  return has(key) ? get_int(key) : fallback;
}

uint64_t RunConfig::get_uint(const std::string& key, uint64_t fallback) const {
  if (!has(key)) return fallback;
  const std::string v = get_string(key);
  try {
    size_t pos = 0;
    const uint64_t out = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: key " + key + " expects an unsigned integer, got '" + v + "'");
  }
}

double RunConfig::get_double(const std::string& key) const {
  return parse_double(key, get_string(key));
}

double RunConfig::get_double(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

bool RunConfig::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  std::string v = get_string(key);
  for (char& c : v) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config: key " + key + " expects a boolean, got '" + get_string(key) + "'");
}

namespace {

std::vector<std::string> split(const std::string& v, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : v) {
    if (c == sep) {
      parts.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  parts.push_back(trim(cur));
  return parts;
}

}  // namespace

std::vector<int> RunConfig::get_int_list(const std::string& key,
                                         const std::vector<int>& fallback) const {
  if (!has(key)) return fallback;
  std::vector<int> out;
  for (const auto& part : split(get_string(key), ',')) {
    if (part.empty()) throw ConfigError("config: key " + key + " has an empty list entry");
    out.push_back(static_cast<int>(parse_int(key, part)));
  }
  return out;
}

std::vector<double> RunConfig::get_double_list(const std::string& key,
                                               const std::vector<double>& fallback) const {
  if (!has(key)) return fallback;
  std::vector<double> out;
  for (const auto& part : split(get_string(key), ',')) {
    if (part.empty()) throw ConfigError("config: key " + key + " has an empty list entry");
    out.push_back(parse_double(key, part));
  }
  return out;
}

void RunConfig::require_known(const std::set<std::string>& allowed) const {
  std::string unknown;
  for (const auto& [key, value] : entries_) {
    if (!allowed.count(key)) unknown += (unknown.empty() ? "" : ", ") + key;
  }
  if (!unknown.empty()) throw ConfigError("config: unknown keys: " + unknown);
}

}  // namespace egfuse

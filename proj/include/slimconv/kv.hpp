// SPDX-License-Identifier: Apache-2.0
#pragma once

// Flat key=value text used by run configs, checkpoint headers and logs.

#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "slimconv/errors.hpp"

namespace slimconv {

class KeyValues {
 public:
  using Entry = std::pair<std::string, std::string>;

  /// One `key=value` per line; blank lines and '#' comments are skipped.
  static KeyValues parse(const std::string& text, const std::string& origin = "config") {
    KeyValues kv;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos || eq == 0) {
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value, got '" +
                          line + "'");
      }
      kv.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return kv;
  }

  void set(const std::string& key, const std::string& value) {
    for (auto& e : entries_)
      if (e.first == key) {
        e.second = value;
        return;
      }
    entries_.emplace_back(key, value);
  }

  template <typename V>
  void set_num(const std::string& key, V v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    set(key, os.str());
  }

  bool has(const std::string& key) const { return find(key) != nullptr; }

  const std::string& get(const std::string& key) const {
    if (const auto* v = find(key)) return *v;
    throw ConfigError("missing key '" + key + "'");
  }

  std::string get_or(const std::string& key, const std::string& def) const {
    if (const auto* v = find(key)) return *v;
    return def;
  }

  double get_double(const std::string& key) const { return to_double(key, get(key)); }
  double get_double_or(const std::string& key, double def) const {
    return has(key) ? get_double(key) : def;
  }
  std::size_t get_size(const std::string& key) const { return to_size(key, get(key)); }
  std::size_t get_size_or(const std::string& key, std::size_t def) const {
    return has(key) ? get_size(key) : def;
  }
  std::uint64_t get_u64_or(const std::string& key, std::uint64_t def) const {
    return has(key) ? to_u64(key, get(key)) : def;
  }
  bool get_bool_or(const std::string& key, bool def) const {
    if (!has(key)) return def;
    const std::string& v = get(key);
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw ConfigError("key '" + key + "': expected a boolean, got '" + v + "'");
  }

  const std::vector<Entry>& entries() const noexcept { return entries_; }

  std::string to_string() const {
    std::string out;
    for (const auto& [k, v] : entries_) out += k + "=" + v + "\n";
    return out;
  }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  static double to_double(const std::string& key, const std::string& v) {
    char* end = nullptr;
    const double d = std::strtod(v.c_str(), &end);
    if (v.empty() || *end != '\0') throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
    return d;
  }

  static std::uint64_t to_u64(const std::string& key, const std::string& v) {
    char* end = nullptr;
    const unsigned long long d = std::strtoull(v.c_str(), &end, 10);
    if (v.empty() || *end != '\0' || v[0] == '-')
      throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + v + "'");
    return d;
  }

  static std::size_t to_size(const std::string& key, const std::string& v) {
    return static_cast<std::size_t>(to_u64(key, v));
  }

  /// Comma separated list of non-negative integers.
  static std::vector<std::size_t> to_sizes(const std::string& key, const std::string& v) {
    std::vector<std::size_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(to_size(key, trim(item)));
    return out;
  }

 private:
  const std::string* find(const std::string& key) const {
    for (const auto& e : entries_)
      if (e.first == key) return &e.second;
    return nullptr;
  }

  std::vector<Entry> entries_;
};

}  // namespace slimconv

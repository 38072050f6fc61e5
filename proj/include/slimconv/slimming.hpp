// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <cstdlib>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "slimconv/config.hpp"
#include "slimconv/errors.hpp"

namespace slimconv {

/// floor(p * C). Ratios are decimal values; the 1e-9 guard keeps e.g.
/// 0.29 * 100 from flooring to 28 because of binary rounding.
inline std::size_t active_channels(double p, std::size_t channels) {
  if (!(p > 0.0 && p <= 1.0)) {
    throw ContractError("slimming ratio " + std::to_string(p) + " outside (0, 1]");
  }
  if (channels == 0) throw ContractError("channel count must be >= 1");
  const auto c = static_cast<std::size_t>(std::floor(p * static_cast<double>(channels) + 1e-9));
  if (c == 0) {
    throw ContractError("degenerate width: ratio " + std::to_string(p) + " keeps 0 of " +
                        std::to_string(channels) + " channels");
  }
  return std::min(c, channels);
}

/// Intermediate width of a slimmed block, 4 * floor(p * C).
inline std::size_t expansion_channels(double p, std::size_t channels) {
  return kExpansion * active_channels(p, channels);
}

/// One slimming ratio per block; identifies a subnetwork.
class PList {
 public:
  PList() = default;
  explicit PList(std::vector<double> ratios) : ratios_(std::move(ratios)) {
    for (double p : ratios_) {
      if (!(p > 0.0 && p <= 1.0)) {
        throw ContractError("slimming ratio " + std::to_string(p) + " outside (0, 1]");
      }
    }
  }

  static PList uniform(double p, std::size_t n) { return PList(std::vector<double>(n, p)); }

  /// Parses "0.5,0.25,..." or "all:0.5" (the latter needs n_blocks).
  static PList parse(const std::string& text, std::size_t n_blocks = 0) {
    if (text.rfind("all:", 0) == 0) {
      if (n_blocks == 0) throw ContractError("'all:' p-list needs a known block count");
      return uniform(parse_ratio(text.substr(4)), n_blocks);
    }
    std::vector<double> r;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item.find_first_not_of(" \t") == std::string::npos) continue;
      r.push_back(parse_ratio(item));
    }
    if (r.empty()) throw ContractError("empty p-list '" + text + "'");
    return PList(std::move(r));
  }

  std::size_t size() const noexcept { return ratios_.size(); }
  double operator[](std::size_t i) const { return ratios_.at(i); }
  const std::vector<double>& ratios() const noexcept { return ratios_; }

  double mean() const {
    if (ratios_.empty()) return 0.0;
    return std::accumulate(ratios_.begin(), ratios_.end(), 0.0) /
           static_cast<double>(ratios_.size());
  }

  bool is_uniform() const {
    return std::all_of(ratios_.begin(), ratios_.end(),
                       [&](double p) { return p == ratios_.front(); });
  }

  bool is_full() const {
    return std::all_of(ratios_.begin(), ratios_.end(), [](double p) { return p == 1.0; });
  }

  /// Shortest decimal form, comma separated.
  std::string to_string() const {
    std::string out;
    for (std::size_t i = 0; i < ratios_.size(); ++i) {
      if (i) out += ',';
      out += format_ratio(ratios_[i]);
    }
    return out;
  }

  /// "all:0.5" for uniform lists, otherwise the full list.
  std::string label() const {
    if (!ratios_.empty() && is_uniform()) return "all:" + format_ratio(ratios_.front());
    return to_string();
  }

  static std::string format_ratio(double p) {
    char buf[32];
    for (int prec = 1; prec <= 17; ++prec) {
      std::snprintf(buf, sizeof buf, "%.*g", prec, p);
      if (std::strtod(buf, nullptr) == p) break;
    }
    return buf;
  }

  friend bool operator==(const PList&, const PList&) = default;

 private:
  static double parse_ratio(const std::string& s) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    while (end && (*end == ' ' || *end == '\t')) ++end;
    if (end == s.c_str() || (end && *end != '\0')) {
      throw ContractError("malformed slimming ratio '" + s + "'");
    }
    return v;
  }

  std::vector<double> ratios_;
};

/// Checks length and that every block keeps at least one channel.
inline void validate_plist(const PList& plist, const std::vector<std::size_t>& channels) {
  if (plist.size() != channels.size()) {
    throw ContractError("p-list has length " + std::to_string(plist.size()) + ", expected " +
                        std::to_string(channels.size()) + " (one ratio per block)");
  }
  for (std::size_t i = 0; i < channels.size(); ++i) active_channels(plist[i], channels[i]);
}

/// Active widths floor(p_i * C_i); the forward pass depends on a p-list only
/// through this vector.
inline std::vector<std::size_t> active_widths(const PList& plist,
                                              const std::vector<std::size_t>& channels) {
  validate_plist(plist, channels);
  std::vector<std::size_t> out(channels.size());
  for (std::size_t i = 0; i < channels.size(); ++i) out[i] = active_channels(plist[i], channels[i]);
  return out;
}

/// True iff a's active widths are element-wise <= b's.
inline bool is_nested(const PList& a, const PList& b, const std::vector<std::size_t>& channels) {
  if (a.size() != b.size()) {
    throw ContractError("is_nested: p-list lengths differ (" + std::to_string(a.size()) + " vs " +
                        std::to_string(b.size()) + ")");
  }
  const auto wa = active_widths(a, channels);
  const auto wb = active_widths(b, channels);
  for (std::size_t i = 0; i < wa.size(); ++i)
    if (wa[i] > wb[i]) return false;
  return true;
}

/// The K p-lists trained jointly.
struct SubnetworkSet {
  std::vector<PList> lists;

  std::size_t size() const noexcept { return lists.size(); }
  const PList& operator[](std::size_t i) const { return lists.at(i); }

  /// No two lists with identical widths and, when `require_full`, exactly one
  /// all-ones list.
  void validate(const std::vector<std::size_t>& channels, bool require_full = true) const {
    if (lists.empty()) throw ContractError("subnetwork menu is empty");
    std::size_t full = 0;
    std::set<std::vector<std::size_t>> seen;
    for (const auto& l : lists) {
      if (!seen.insert(active_widths(l, channels)).second) {
        throw ContractError("subnetwork menu has two p-lists with identical widths: " + l.label());
      }
      if (l.is_full()) ++full;
    }
    if (require_full && full != 1) throw ContractError("subnetwork menu must contain exactly one all-ones p-list");
  }

  std::string to_string() const {
    std::string out;
    for (std::size_t i = 0; i < lists.size(); ++i) {
      if (i) out += ';';
      out += lists[i].to_string();
    }
    return out;
  }

  static SubnetworkSet parse(const std::string& text) {
    SubnetworkSet s;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ';'))
      if (!item.empty()) s.lists.push_back(PList::parse(item));
    return s;
  }
};

/// Default ratio menus by subnetwork count. K = 5 uses 0.625 as its extra
/// width, a documented guess.
inline std::vector<double> default_menu_ratios(std::size_t k) {
  switch (k) {
    case 1: return {1.0};
    case 2: return {0.5, 1.0};
    case 3: return {0.25, 0.5, 1.0};
    case 4: return {0.25, 0.5, 0.75, 1.0};
    case 5: return {0.25, 0.5, 0.625, 0.75, 1.0};
    default: throw ContractError("no default menu for K=" + std::to_string(k));
  }
}

/// One uniform p-list per ratio, sorted ascending.
inline SubnetworkSet uniform_plists(std::vector<double> ratios, std::size_t n_blocks) {
  std::sort(ratios.begin(), ratios.end());
  if (std::adjacent_find(ratios.begin(), ratios.end()) != ratios.end())
    throw ContractError("uniform_plists: ratios must be distinct");
  if (ratios.empty() || ratios.back() != 1.0)
    throw ContractError("uniform_plists: ratios must include 1.0");
  SubnetworkSet s;
  for (double r : ratios) s.lists.push_back(PList::uniform(r, n_blocks));
  return s;
}

inline SubnetworkSet uniform_plists(std::size_t k, std::size_t n_blocks) {
  return uniform_plists(default_menu_ratios(k), n_blocks);
}

}  // namespace slimconv

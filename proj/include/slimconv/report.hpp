// SPDX-License-Identifier: Apache-2.0
#pragma once

// Tab-separated cost / accuracy tables.

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "slimconv/cost_model.hpp"
#include "slimconv/slimming.hpp"

namespace slimconv {

struct ReportRow {
  std::string label;
  double pbar = 0.0;
  double gmacs = 0.0;
  std::uint64_t params = 0;
  std::optional<double> top1;
};

inline ReportRow cost_row(const ModelConfig& cfg, const PList& plist, const CostOptions& opt) {
  const CostReport r = model_macs(cfg, plist, opt);
  return {plist.label(), plist.mean(), r.gmacs(), r.params, std::nullopt};
}

inline std::string format_report(const std::vector<ReportRow>& rows) {
  const bool acc = !rows.empty() && rows.front().top1.has_value();
  std::string out = acc ? "width\tpbar\tgmacs\tparams\ttop1\n" : "width\tpbar\tgmacs\tparams\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "\t%.4f\t%.6g\t%llu", r.pbar, r.gmacs,
                  static_cast<unsigned long long>(r.params));
    out += r.label + buf;
    if (acc) {
      std::snprintf(buf, sizeof buf, "\t%.6f", r.top1.value_or(0.0));
      out += buf;
    }
    out += '\n';
  }
  return out;
}

}  // namespace slimconv

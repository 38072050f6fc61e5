// SPDX-License-Identifier: Apache-2.0
#pragma once

// Greedy per-block width search. Starting from all ones, each iteration tries
// lowering every reducible block by one step, keeps the single reduction with
// the best validation accuracy and stops once the mean ratio reaches the
// target.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "slimconv/data.hpp"
#include "slimconv/errors.hpp"
#include "slimconv/kv.hpp"
#include "slimconv/slimming.hpp"
#include "slimconv/training.hpp"

namespace slimconv {

struct SearchConfig {
  double target_pbar = 0.5;
  double step = 0.1;
  double floor = 0.0;  // 0 means one step
  double val_fraction = 0.2;
  std::uint64_t subset_seed = 7;
  bool exact = false;  // evaluate candidates on the whole validation split
  bool keep_full = true;
  double warmup_fraction = 1.0 / 6.0;

  double effective_floor() const { return floor > 0.0 ? floor : step; }

  /// Number of steps from 1.0 down to the floor.
  std::size_t max_decrements() const {
    return static_cast<std::size_t>(std::floor((1.0 - effective_floor()) / step + 1e-9));
  }

  void validate() const {
    if (!(target_pbar > 0.0 && target_pbar < 1.0)) throw ConfigError("target_pbar must lie in (0, 1)");
    if (!(step > 0.0 && step <= 1.0)) throw ConfigError("step must lie in (0, 1]");
    const double grid = 1.0 / step;
    if (std::abs(grid - std::round(grid)) > 1e-9) {
      throw ConfigError("step must divide 1 (got " + PList::format_ratio(step) + ")");
    }
    if (floor != 0.0 && !(floor >= step - 1e-12 && floor < 1.0))
      throw ConfigError("floor must lie in [step, 1)");
    if (!(val_fraction > 0.0 && val_fraction <= 1.0)) throw ConfigError("val_fraction must lie in (0, 1]");
    if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0))
      throw ConfigError("warmup_fraction must lie in (0, 1)");
  }

  static constexpr std::array<const char*, 8> keys = {
      "target_pbar", "step", "floor", "val_fraction", "subset_seed", "exact", "keep_full",
      "warmup_fraction"};

  KeyValues to_kv() const {
    KeyValues kv;
    kv.set_num("target_pbar", target_pbar);
    kv.set_num("step", step);
    kv.set_num("floor", floor);
    kv.set_num("val_fraction", val_fraction);
    kv.set_num("subset_seed", subset_seed);
    kv.set("exact", exact ? "true" : "false");
    kv.set("keep_full", keep_full ? "true" : "false");
    kv.set_num("warmup_fraction", warmup_fraction);
    return kv;
  }

  static SearchConfig from_kv(const KeyValues& kv);
  static SearchConfig from_kv(const KeyValues& kv, SearchConfig c) {
    c.target_pbar = kv.get_double_or("target_pbar", c.target_pbar);
    c.step = kv.get_double_or("step", c.step);
    c.floor = kv.get_double_or("floor", c.floor);
    c.val_fraction = kv.get_double_or("val_fraction", c.val_fraction);
    c.subset_seed = kv.get_u64_or("subset_seed", c.subset_seed);
    c.exact = kv.get_bool_or("exact", c.exact);
    c.keep_full = kv.get_bool_or("keep_full", c.keep_full);
    c.warmup_fraction = kv.get_double_or("warmup_fraction", c.warmup_fraction);
    c.validate();
    return c;
  }
};

inline SearchConfig SearchConfig::from_kv(const KeyValues& kv) { return from_kv(kv, SearchConfig{}); }

/// Ratio after `d` decrements, snapped to 1e-9 so that e.g. 1 - 5 * 0.1 is
/// exactly the double nearest 0.5.
inline double ratio_after(std::size_t d, double step) {
  return std::round((1.0 - static_cast<double>(d) * step) * 1e9) / 1e9;
}

struct SearchIteration {
  std::size_t iteration = 0;  // 1-based
  std::size_t block = 0;
  PList plist;
  double accuracy = 0.0;
  std::vector<std::size_t> candidate_blocks;
  std::vector<double> candidate_accuracy;  // parallel to candidate_blocks
};

struct SearchTrace {
  std::vector<SearchIteration> iterations;
  PList final_plist;
  std::size_t evaluations = 0;

  std::string to_text() const {
    std::string out;
    char buf[96];
    for (const auto& it : iterations) {
      std::snprintf(buf, sizeof buf, "iter=%zu block=%zu acc=%.6f candidates=%zu mean=%.6f plist=",
                    it.iteration, it.block, it.accuracy, it.candidate_blocks.size(), it.plist.mean());
      out += buf + it.plist.to_string() + "\n";
    }
    return out;
  }
};

using PListEvaluator = std::function<double(const PList&)>;

/// Greedy search over `channels.size()` blocks. A block is a candidate while
/// one more step keeps its ratio at or above the floor and its width at one
/// channel or more. The best candidate wins; ties go to the lowest block index.
inline SearchTrace greedy_search(const PListEvaluator& evaluate,
                                 const std::vector<std::size_t>& channels, const SearchConfig& cfg) {
  cfg.validate();
  const std::size_t n = channels.size();
  if (n == 0) throw ContractError("greedy_search: no blocks");
  const std::size_t max_d = cfg.max_decrements();
  const double needed = (1.0 - cfg.target_pbar) * static_cast<double>(n);
  std::vector<std::size_t> dec(n, 0);
  std::size_t total_dec = 0;
  auto plist_of = [&](const std::vector<std::size_t>& d) {
    std::vector<double> r(n);
    for (std::size_t i = 0; i < n; ++i) r[i] = ratio_after(d[i], cfg.step);
    return PList(std::move(r));
  };
  auto reducible = [&](std::size_t i) {
    if (dec[i] + 1 > max_d) return false;
    const double r = ratio_after(dec[i] + 1, cfg.step);
    return r > 0.0 && std::floor(r * static_cast<double>(channels[i]) + 1e-9) >= 1.0;
  };

  SearchTrace trace;
  while (static_cast<double>(total_dec) * cfg.step < needed - 1e-9) {
    SearchIteration it;
    it.iteration = trace.iterations.size() + 1;
    for (std::size_t i = 0; i < n; ++i) {
      if (!reducible(i)) continue;
      ++dec[i];
      const double acc = evaluate(plist_of(dec));
      --dec[i];
      ++trace.evaluations;
      it.candidate_blocks.push_back(i);
      it.candidate_accuracy.push_back(acc);
    }
    if (it.candidate_blocks.empty()) {
      char buf[160];
      std::snprintf(buf, sizeof buf,
                    "greedy_search: no reducible block left at mean ratio %.6f, target %.6f "
                    "(floor %.6f)",
                    plist_of(dec).mean(), cfg.target_pbar, cfg.effective_floor());
      throw SearchInfeasibleError(buf);
    }
    std::size_t best = 0;
    for (std::size_t c = 1; c < it.candidate_blocks.size(); ++c)
      if (it.candidate_accuracy[c] > it.candidate_accuracy[best]) best = c;
    it.block = it.candidate_blocks[best];
    it.accuracy = it.candidate_accuracy[best];
    ++dec[it.block];
    ++total_dec;
    it.plist = plist_of(dec);
    trace.iterations.push_back(std::move(it));
  }
  trace.final_plist = plist_of(dec);
  return trace;
}

/// Search driven by validation accuracy of `store` on `val`.
inline SearchTrace greedy_search(const ParamStore<float>& store, const ModelConfig& model,
                                 const Dataset& val, const DatasetSpec& norm,
                                 const SearchConfig& cfg) {
  const Dataset subset = cfg.exact ? val : sample_subset(val, cfg.val_fraction, cfg.subset_seed);
  return greedy_search(
      [&](const PList& p) { return evaluate(store, model, p, subset, norm).accuracy(); },
      model.block_channels(), cfg);
}

struct FoundList {
  double target_pbar = 0.0;
  PList plist;
};

inline std::size_t warmup_epochs_for(const TrainConfig& t, const SearchConfig& s) {
  const auto w = static_cast<std::size_t>(std::llround(static_cast<double>(t.epochs) * s.warmup_fraction));
  if (w == 0 || w >= t.epochs) {
    throw ConfigError("warmup_fraction " + PList::format_ratio(s.warmup_fraction) + " of " +
                      std::to_string(t.epochs) + " epochs leaves no warmup or no continuation");
  }
  return w;
}

/// Menu used after the search: the found lists in ascending target order,
/// then the all-ones list unless dropped.
inline SubnetworkSet searched_menu(const std::vector<FoundList>& found, const ModelConfig& model,
                                   bool keep_full) {
  SubnetworkSet menu;
  for (const auto& f : found) menu.lists.push_back(f.plist);
  if (keep_full) menu.lists.push_back(PList::uniform(1.0, model.num_blocks()));
  menu.validate(model.block_channels(), keep_full);
  return menu;
}

/// Uniform-menu warmup, one search per non-full menu ratio, then training
/// continues on the searched menu with the same schedule. Resumes from any
/// point: completed warmup epochs and existing `found` lists are reused.
inline void warmup_then_search_then_continue(TrainState& s, const DatasetSplits& data,
                                             const SearchConfig& cfg, std::vector<FoundList>& found,
                                             std::ostream* log, const EpochHook& on_epoch = {}) {
  cfg.validate();
  const std::size_t warm = warmup_epochs_for(s.train, cfg);
  if (found.empty()) {
    train_epochs(s, data, warm, log, on_epoch);
    const Dataset subset =
        cfg.exact ? data.val : sample_subset(data.val, cfg.val_fraction, cfg.subset_seed);
    for (const auto& l : s.menu.lists) {
      if (l.is_full()) continue;
      if (!l.is_uniform()) throw ContractError("search needs a uniform warmup menu, found " + l.label());
      SearchConfig one = cfg;
      one.target_pbar = l[0];
      one.exact = true;
      const auto trace = greedy_search(
          [&](const PList& p) { return evaluate(s.params, s.model, p, subset, s.data).accuracy(); },
          s.model.block_channels(), one);
      if (log) {
        *log << "search target=" << PList::format_ratio(one.target_pbar)
             << " iterations=" << trace.iterations.size() << " evaluations=" << trace.evaluations
             << " plist=" << trace.final_plist.to_string() << '\n';
      }
      found.push_back({one.target_pbar, trace.final_plist});
    }
    s.menu = searched_menu(found, s.model, cfg.keep_full);
  }
  train_epochs(s, data, s.train.epochs, log, on_epoch);
}

}  // namespace slimconv

// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "slimconv/search.hpp"

using namespace slimconv;

namespace {

/// Deterministic pseudo-accuracy of a p-list: a hash of its tenths, so ties
/// are common and the order is arbitrary.
double hashed_accuracy(const PList& p) {
  std::uint64_t h = 1469598103934665603ull;
  for (std::size_t i = 0; i < p.size(); ++i) {
    h ^= static_cast<std::uint64_t>(std::llround(p[i] * 100));
    h *= 1099511628211ull;
  }
  return static_cast<double>(h % 7) / 7.0;
}

struct OracleStep {
  std::size_t block;
  double accuracy;
};

/// Independent greedy: ratios held as integer hundredths, the stop test done
/// on the integer sum of all ratios.
std::vector<OracleStep> oracle_greedy(const std::vector<std::size_t>& ch, int step_h, int target_h,
                                      int floor_h, const std::function<double(const PList&)>& eval,
                                      std::size_t* evaluations) {
  const std::size_t n = ch.size();
  std::vector<int> r(n, 100);
  auto to_plist = [&](const std::vector<int>& v) {
    std::vector<double> d;
    for (int x : v) d.push_back(x / 100.0);
    return PList(d);
  };
  std::vector<OracleStep> out;
  *evaluations = 0;
  auto sum = [&] {
    int s = 0;
    for (int x : r) s += x;
    return s;
  };
  while (sum() > target_h * static_cast<int>(n)) {
    bool any = false;
    OracleStep best{0, -1.0};
    for (std::size_t i = 0; i < n; ++i) {
      const int next = r[i] - step_h;
      if (next < floor_h || next * static_cast<int>(ch[i]) < 100) continue;
      auto trial = r;
      trial[i] = next;
      const double a = eval(to_plist(trial));
      ++*evaluations;
      if (!any || a > best.accuracy) best = {i, a};
      any = true;
    }
    if (!any) break;
    r[best.block] -= step_h;
    out.push_back(best);
  }
  return out;
}

}  // namespace

TEST(SearchConfig, DerivedQuantitiesAndValidation) {
  SearchConfig c;
  EXPECT_DOUBLE_EQ(c.effective_floor(), 0.1);
  EXPECT_EQ(c.max_decrements(), 9u);
  c.floor = 0.3;
  EXPECT_EQ(c.max_decrements(), 7u);
  EXPECT_EQ(ratio_after(3, 0.1), 0.7);
  EXPECT_EQ(ratio_after(9, 0.1), 0.1);
  SearchConfig bad;
  bad.step = 0.3;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = {};
  bad.target_pbar = 1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = {};
  bad.floor = 0.05;
  EXPECT_THROW(bad.validate(), ConfigError);
  const SearchConfig back = SearchConfig::from_kv(c.to_kv());
  EXPECT_EQ(back.to_kv().to_string(), c.to_kv().to_string());
  TrainConfig t;
  EXPECT_EQ(warmup_epochs_for(t, SearchConfig{}), 17u);
  t.epochs = 2;
  t.warmup_epochs = 1;
  EXPECT_THROW(warmup_epochs_for(t, SearchConfig{}), ConfigError);
}

TEST(GreedySearch, NinetyIterationsAtEighteenBlocks) {
  const std::vector<std::size_t> ch(18, 96);
  std::size_t calls = 0;
  const auto trace = greedy_search(
      [&](const PList&) {
        ++calls;
        return 0.5;
      },
      ch, SearchConfig{});
  EXPECT_EQ(trace.iterations.size(), 90u);
  EXPECT_EQ(trace.evaluations, calls);
  EXPECT_LE(calls, 90u * 18u);
  // all ties: lowest index first, so blocks 0..9 end at the floor
  for (std::size_t i = 0; i < 18; ++i) EXPECT_EQ(trace.final_plist[i], i < 10 ? 0.1 : 1.0) << i;
  EXPECT_NEAR(trace.final_plist.mean(), 0.5, 1e-12);
}

TEST(GreedySearch, OneStepTarget) {
  const std::vector<std::size_t> ch(18, 96);
  SearchConfig c;
  c.target_pbar = 1.0 - 0.1 / 18;
  const auto trace = greedy_search(hashed_accuracy, ch, c);
  ASSERT_EQ(trace.iterations.size(), 1u);
  EXPECT_EQ(trace.evaluations, 18u);
  EXPECT_EQ(trace.iterations[0].candidate_blocks.size(), 18u);
}

TEST(GreedySearch, RiggedEvaluatorReducesCostlyBlockLast) {
  // accuracy drops most when block 0 shrinks
  const std::vector<double> w = {10.0, 1.0, 2.0, 3.0, 4.0};
  auto eval = [&](const PList& p) {
    double a = 0;
    for (std::size_t i = 0; i < p.size(); ++i) a += w[i] * p[i];
    return a;
  };
  SearchConfig c;
  c.step = 0.25;
  c.target_pbar = 0.35;
  const auto trace = greedy_search(eval, std::vector<std::size_t>(5, 64), c);
  ASSERT_EQ(trace.iterations.size(), 13u);
  for (std::size_t k = 0; k < 12; ++k) EXPECT_NE(trace.iterations[k].block, 0u) << k;
  EXPECT_EQ(trace.iterations.back().block, 0u);
  // cheapest first: block 1 three times, then 2, 3, 4
  const std::size_t expect[12] = {1, 1, 1, 2, 2, 2, 3, 3, 3, 4, 4, 4};
  for (std::size_t k = 0; k < 12; ++k) EXPECT_EQ(trace.iterations[k].block, expect[k]) << k;
}

TEST(GreedySearch, MatchesIndependentImplementation) {
  const std::vector<std::size_t> ch = {4, 8, 16, 16, 32, 32, 64};
  for (double target : {0.3, 0.5, 0.75}) {
    SearchConfig c;
    c.target_pbar = target;
    const auto trace = greedy_search(hashed_accuracy, ch, c);
    std::size_t evals = 0;
    const auto ref = oracle_greedy(ch, 10, static_cast<int>(std::lround(target * 100)), 10,
                                   hashed_accuracy, &evals);
    ASSERT_EQ(trace.iterations.size(), ref.size()) << target;
    EXPECT_EQ(trace.evaluations, evals);
    for (std::size_t k = 0; k < ref.size(); ++k) {
      EXPECT_EQ(trace.iterations[k].block, ref[k].block) << target << " " << k;
      EXPECT_EQ(trace.iterations[k].accuracy, ref[k].accuracy);
    }
  }
}

TEST(GreedySearch, ArgmaxAndMeanProperties) {
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 3 + rng.uniform_int(15);
    std::vector<std::size_t> ch(n);
    for (auto& c : ch) c = 8 + rng.uniform_int(120);
    SearchConfig c;
    c.step = trial % 2 ? 0.1 : 0.05;
    c.floor = c.step;
    c.target_pbar = 0.2 + 0.05 * static_cast<double>(rng.uniform_int(14));
    const auto trace = greedy_search(hashed_accuracy, ch, c);
    for (const auto& it : trace.iterations) {
      double best = -1;
      std::size_t best_block = 0;
      for (std::size_t j = 0; j < it.candidate_blocks.size(); ++j)
        if (it.candidate_accuracy[j] > best) {
          best = it.candidate_accuracy[j];
          best_block = it.candidate_blocks[j];
        }
      ASSERT_EQ(it.accuracy, best);
      ASSERT_EQ(it.block, best_block);
    }
    const double mean = trace.final_plist.mean();
    EXPECT_LE(mean, c.target_pbar + 1e-9);
    EXPECT_GE(mean, c.target_pbar - c.step / static_cast<double>(n) - 1e-9);
    for (std::size_t i = 0; i < n; ++i) EXPECT_GE(trace.final_plist[i], c.step - 1e-12);
  }
}

TEST(GreedySearch, WidthNeverDropsBelowOneChannel) {
  SearchConfig c;
  c.target_pbar = 0.2;
  const auto trace = greedy_search([](const PList&) { return 0.0; }, {4, 96}, c);
  EXPECT_EQ(trace.final_plist[0], 0.3);  // 0.2 * 4 floors to zero channels
  EXPECT_GE(active_channels(trace.final_plist[0], 4), 1u);
}

TEST(GreedySearch, InfeasibleTarget) {
  SearchConfig c;
  c.floor = 0.8;
  c.target_pbar = 0.5;
  try {
    greedy_search(hashed_accuracy, std::vector<std::size_t>(6, 32), c);
    FAIL();
  } catch (const SearchInfeasibleError& e) {
    EXPECT_NE(std::string(e.what()).find("0.5"), std::string::npos) << e.what();
  }
}

TEST(GreedySearch, StoreBasedSearchLeavesWeightsAlone) {
  DatasetSpec spec;
  spec.train_size = 10;
  spec.val_size = 50;
  spec.test_size = 10;
  const auto data = generate_synthetic_dataset(spec, 5);
  const ModelConfig cfg = model_preset("toy");
  const auto st = build_model<float>(cfg, 6);
  const auto before = st;
  SearchConfig c;
  c.target_pbar = 0.75;
  const auto trace = greedy_search(st, cfg, data.val, spec, c);
  EXPECT_TRUE(st == before);
  EXPECT_EQ(trace.final_plist.size(), cfg.num_blocks());
  const auto again = greedy_search(st, cfg, data.val, spec, c);
  EXPECT_EQ(again.to_text(), trace.to_text());
}

TEST(Protocol, WarmupSearchContinue) {
  DatasetSpec spec;
  spec.train_size = 96;
  spec.val_size = 50;
  spec.test_size = 10;
  const auto data = generate_synthetic_dataset(spec, spec.data_seed);
  TrainConfig t;
  t.epochs = 6;
  t.warmup_epochs = 1;
  t.batch_size = 32;
  SearchConfig sc;
  auto run = [&](std::string* log_out) {
    auto s = init_train_state(model_preset("toy"), t, spec);
    std::vector<FoundList> found;
    std::ostringstream log;
    std::size_t hooks = 0;
    warmup_then_search_then_continue(s, data, sc, found, &log, [&](const TrainState&) { ++hooks; });
    EXPECT_EQ(hooks, 6u);
    EXPECT_EQ(s.epoch, 6u);
    *log_out = log.str();
    return std::pair{s.menu, found};
  };
  std::string log_a, log_b;
  const auto [menu, found] = run(&log_a);
  ASSERT_EQ(found.size(), 2u);
  EXPECT_EQ(found[0].target_pbar, 0.25);
  EXPECT_EQ(found[1].target_pbar, 0.5);
  ASSERT_EQ(menu.size(), 3u);
  EXPECT_EQ(menu[0], found[0].plist);
  EXPECT_EQ(menu[1], found[1].plist);
  EXPECT_TRUE(menu[2].is_full());
  for (const auto& f : found) {
    EXPECT_LE(f.plist.mean(), f.target_pbar + 1e-9);
    EXPECT_GE(f.plist.mean(), f.target_pbar - 0.1 / 5 - 1e-9);
  }
  EXPECT_NE(log_a.find("search target=0.25"), std::string::npos) << log_a;
  // the warmup epoch logs before the searches
  EXPECT_LT(log_a.find("epoch=1 "), log_a.find("search target"));
  const auto [menu_b, found_b] = run(&log_b);
  EXPECT_EQ(menu_b.to_string(), menu.to_string());
  EXPECT_EQ(log_a, log_b);

  EXPECT_FALSE(searched_menu(found, model_preset("toy"), false).lists.back().is_full());
}

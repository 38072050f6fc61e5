// SPDX-License-Identifier: Apache-2.0
// slimconv: train, evaluate, search and cost slimmable ConvNeXt models.
//
// Exit codes: 0 ok, 1 usage, 2 contract/config violation, 3 I/O or file format.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "slimconv/slimconv.hpp"

using namespace slimconv;

namespace {

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::Format:
    case ErrorKind::Integrity:
    case ErrorKind::Io:
      return 3;
    default:
      return 2;
  }
}

const Dataset& pick_split(const DatasetSplits& d, const std::string& split) {
  if (split == "train") return d.train;
  if (split == "val") return d.val;
  if (split == "test") return d.test;
  throw ConfigError("unknown split '" + split + "' (expected train, val or test)");
}

/// The config must describe the run stored in the checkpoint; only `out` may differ.
void check_resume_matches(const RunConfig& rc, const Checkpoint& ck) {
  const TrainState& s = ck.state;
  auto differ = [](const char* what) { throw ConfigError(std::string("config differs from checkpoint in ") + what); };
  if (!(rc.model == s.model)) differ("model settings");
  if (rc.train.to_kv().to_string() != s.train.to_kv().to_string()) differ("training settings");
  if (rc.data.to_kv().to_string() != s.data.to_kv().to_string()) differ("dataset settings");
  if (rc.autoslim != ck.autoslim) differ("autoslim");
  if (rc.autoslim && rc.search.to_kv().to_string() != ck.search.to_kv().to_string()) differ("search settings");
}

struct TrainArgs {
  std::string config, resume, out;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
  const RunConfig rc = RunConfig::parse(read_text(a.config), a.config);
  const std::string out = a.out.empty() ? rc.out : a.out;
  Checkpoint ck;
  if (a.resume.empty()) {
    ck = new_checkpoint(rc);
  } else {
    ck = load_checkpoint(a.resume, true);
    check_resume_matches(rc, ck);
  }
  const DatasetSplits data = load_dataset(ck.state.data);
  run_training(ck, data, a.quiet ? nullptr : &std::cout, out);
  save_checkpoint(out, ck);
  std::cout << "saved " << out << " epoch=" << ck.state.epoch << " step=" << ck.state.step << '\n';
  return 0;
}

struct EvalArgs {
  std::string ckpt, plist, split = "val";
  int menu_index = -1;
  bool ema = false, checksum = false;
};

int cmd_eval(const EvalArgs& a) {
  const Checkpoint ck = load_checkpoint(a.ckpt, a.checksum);
  const TrainState& s = ck.state;
  PList plist;
  if (a.menu_index >= 0) {
    if (static_cast<std::size_t>(a.menu_index) >= s.menu.size()) {
      throw ContractError("menu index " + std::to_string(a.menu_index) + " out of range (menu has " +
                          std::to_string(s.menu.size()) + " entries)");
    }
    plist = s.menu[static_cast<std::size_t>(a.menu_index)];
  } else {
    plist = PList::parse(a.plist, s.model.num_blocks());
  }
  validate_plist(plist, s.model.block_channels());
  const DatasetSplits data = load_dataset(s.data);
  const ParamStore<float>& w = a.ema ? s.ema.shadow : s.params;
  const EvalResult r = evaluate(w, s.model, plist, pick_split(data, a.split), s.data);
  CostOptions co;
  co.input_h = s.model.input_h;
  co.input_w = s.model.input_w;
  std::printf("split=%s weights=%s plist=%s pbar=%.4f gmacs=%.6g correct=%zu total=%zu loss=%.6f acc=%.6f\n",
              a.split.c_str(), a.ema ? "ema" : "raw", plist.label().c_str(), plist.mean(),
              model_macs(s.model, plist, co).gmacs(), r.correct, r.total, r.loss, r.accuracy());
  return 0;
}

struct SearchArgs {
  std::string ckpt, out, split = "val";
  double target = 0.5, step = 0.1, floor = 0.0;
  bool exact = false, ema = false;
};

int cmd_search(const SearchArgs& a) {
  const Checkpoint ck = load_checkpoint(a.ckpt);
  const TrainState& s = ck.state;
  SearchConfig c = ck.search;
  c.target_pbar = a.target;
  c.step = a.step;
  c.floor = a.floor;
  c.exact = c.exact || a.exact;
  const DatasetSplits data = load_dataset(s.data);
  const SearchTrace trace =
      greedy_search(a.ema ? s.ema.shadow : s.params, s.model, pick_split(data, a.split), s.data, c);
  std::cout << trace.to_text();
  std::cout << "plist=" << trace.final_plist.to_string() << '\n';
  if (!a.out.empty()) {
    std::ofstream os(a.out);
    if (!os) throw IoError("cannot open '" + a.out + "' for writing");
    os << trace.final_plist.to_string() << '\n';
  }
  return 0;
}

struct CostArgs {
  std::string preset = "T", plist;
  std::size_t input_size = 224, menu_size = 0;
  bool interface_slimming = false, blocks = false;
};

int cmd_cost(const CostArgs& a) {
  const ModelConfig cfg = model_preset(a.preset);
  CostOptions o;
  o.input_h = o.input_w = a.input_size;
  o.interface_slimming = a.interface_slimming;
  SubnetworkSet lists;
  if (!a.plist.empty()) lists.lists.push_back(PList::parse(a.plist, cfg.num_blocks()));
  if (a.menu_size) {
    for (const auto& l : uniform_plists(a.menu_size, cfg.num_blocks()).lists) lists.lists.push_back(l);
  }
  if (lists.size() == 0) lists.lists.push_back(PList::uniform(1.0, cfg.num_blocks()));
  std::vector<ReportRow> rows;
  for (const auto& l : lists.lists) {
    validate_plist(l, cfg.block_channels());
    rows.push_back(cost_row(cfg, l, o));
  }
  std::cout << format_report(rows);
  if (a.blocks) {
    const CostReport r = model_macs(cfg, lists[0], o);
    std::cout << "stem\t" << r.stem_macs << '\n';
    for (std::size_t i = 0; i < r.downsample_macs.size(); ++i)
      std::cout << "downsample" << i + 1 << '\t' << r.downsample_macs[i] << '\n';
    for (std::size_t i = 0; i < r.block_macs.size(); ++i)
      std::cout << "block" << i << '\t' << r.block_macs[i] << '\n';
    std::cout << "head\t" << r.head_macs << '\n';
  }
  return 0;
}

struct ReportArgs {
  std::string ckpt, split = "val";
  bool ema = false;
};

int cmd_export_report(const ReportArgs& a) {
  const Checkpoint ck = load_checkpoint(a.ckpt);
  const TrainState& s = ck.state;
  const DatasetSplits data = load_dataset(s.data);
  const Dataset& d = pick_split(data, a.split);
  CostOptions o;
  o.input_h = s.model.input_h;
  o.input_w = s.model.input_w;
  std::vector<ReportRow> rows;
  for (const auto& l : s.menu.lists) {
    ReportRow r = cost_row(s.model, l, o);
    r.top1 = evaluate(a.ema ? s.ema.shadow : s.params, s.model, l, d, s.data).accuracy();
    rows.push_back(r);
  }
  std::cout << format_report(rows);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Slimmable ConvNeXt: training, evaluation, width search and cost model"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train (or resume) a model from a key=value config file");
  train->add_option("--config", ta.config, "Run configuration file")->required();
  train->add_option("--resume", ta.resume, "Continue from this checkpoint");
  train->add_option("--out", ta.out, "Checkpoint path (overrides the config's out key)");
  train->add_flag("--quiet", ta.quiet, "Suppress per-epoch log lines");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Top-1 accuracy of one subnetwork");
  eval->add_option("--ckpt", ea.ckpt, "Checkpoint")->required();
  auto* pl = eval->add_option("--plist", ea.plist, "Ratios: 'all:0.5' or a comma list, one per block");
  auto* mi = eval->add_option("--menu-index", ea.menu_index, "Index into the checkpoint's menu");
  pl->excludes(mi);
  eval->add_option("--split", ea.split, "train, val or test")->capture_default_str();
  eval->add_flag("--ema", ea.ema, "Evaluate the EMA weights");
  eval->add_flag("--checksum", ea.checksum, "Verify per-tensor checksums while loading");

  SearchArgs sa;
  auto* search = app.add_subcommand("search", "Greedy width search on a trained checkpoint");
  search->add_option("--ckpt", sa.ckpt, "Checkpoint")->required();
  search->add_option("--target-pbar", sa.target, "Target mean ratio")->capture_default_str();
  search->add_option("--step", sa.step, "Ratio decrement")->capture_default_str();
  search->add_option("--floor", sa.floor, "Lowest ratio (0: one step)")->capture_default_str();
  search->add_option("--split", sa.split, "train, val or test")->capture_default_str();
  search->add_flag("--exact", sa.exact, "Use the whole split instead of a fixed subset");
  search->add_flag("--ema", sa.ema, "Search on the EMA weights");
  search->add_option("--out", sa.out, "Write the found p-list here");

  CostArgs ca;
  auto* cost = app.add_subcommand("cost", "Analytic MACs and parameters of a subnetwork");
  cost->add_option("--preset", ca.preset, "toy, T, S or B")->capture_default_str();
  cost->add_option("--plist", ca.plist, "Ratios: 'all:0.5' or a comma list");
  cost->add_option("--menu-size", ca.menu_size, "Also list the K uniform menu widths");
  cost->add_option("--input-size", ca.input_size, "Square input resolution")->capture_default_str();
  cost->add_flag("--interface-slimming", ca.interface_slimming, "Slim stem, downsamplers and head too");
  cost->add_flag("--blocks", ca.blocks, "Per-layer MAC breakdown of the first row");

  ReportArgs ra;
  auto* report = app.add_subcommand("export-report", "Accuracy vs GMACs table for the checkpoint's menu");
  report->add_option("--ckpt", ra.ckpt, "Checkpoint")->required();
  report->add_option("--split", ra.split, "train, val or test")->capture_default_str();
  report->add_flag("--ema", ra.ema, "Evaluate the EMA weights");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }
  try {
    if (*eval && ea.menu_index < 0 && ea.plist.empty()) {
      std::cerr << "eval: one of --plist or --menu-index is required\n" << eval->help();
      return 1;
    }
    if (*train) return cmd_train(ta);
    if (*eval) return cmd_eval(ea);
    if (*search) return cmd_search(sa);
    if (*cost) return cmd_cost(ca);
    if (*report) return cmd_export_report(ra);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

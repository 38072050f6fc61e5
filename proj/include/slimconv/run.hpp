// SPDX-License-Identifier: Apache-2.0
#pragma once

// Flat run configuration and the top-level training entry point.

#include <algorithm>
#include <array>
#include <optional>
#include <ostream>
#include <string>

#include "slimconv/checkpoint.hpp"
#include "slimconv/config.hpp"
#include "slimconv/data.hpp"
#include "slimconv/kv.hpp"
#include "slimconv/model.hpp"
#include "slimconv/search.hpp"
#include "slimconv/training.hpp"

namespace slimconv {

struct RunConfig {
  std::string preset = "toy";
  ModelConfig model = model_preset("toy");
  TrainConfig train;
  DatasetSpec data;
  SearchConfig search;
  bool autoslim = false;
  std::string out = "checkpoint.slnx";

  /// Model keys accepted on top of the preset. Class count and input size
  /// come from the dataset keys, the drop-path rate from the train keys.
  static constexpr std::array<const char*, 6> model_keys = {
      "preset", "depths", "dims", "in_channels", "layer_scale", "layer_scale_init"};
  static constexpr std::array<const char*, 2> run_keys = {"autoslim", "out"};

  static bool known_key(const std::string& k) {
    auto in = [&](const auto& arr) {
      return std::any_of(arr.begin(), arr.end(), [&](const char* s) { return k == s; });
    };
    return in(model_keys) || in(run_keys) || in(TrainConfig::keys) || in(DatasetSpec::keys) ||
           in(SearchConfig::keys);
  }

  static RunConfig from_kv(const KeyValues& kv) {
    for (const auto& [k, v] : kv.entries())
      if (!known_key(k)) throw ConfigError("unknown config key '" + k + "'");
    RunConfig r;
    r.preset = kv.get_or("preset", r.preset);
    r.data = DatasetSpec::from_kv(kv);
    ModelConfig base = model_preset(r.preset);
    base.num_classes = r.data.num_classes;
    base.input_h = base.input_w = r.data.image_size;
    r.train = TrainConfig::from_kv(kv);
    base.drop_path_rate = r.train.drop_path_rate;
    r.model = model_config_from_kv(kv, base);
    r.search = SearchConfig::from_kv(kv);
    r.autoslim = kv.get_bool_or("autoslim", r.autoslim);
    r.out = kv.get_or("out", r.out);
    if (r.autoslim) warmup_epochs_for(r.train, r.search);
    return r;
  }

  static RunConfig parse(const std::string& text, const std::string& origin = "config") {
    return from_kv(KeyValues::parse(text, origin));
  }
};

inline Checkpoint new_checkpoint(const RunConfig& rc) {
  Checkpoint ck;
  ck.state = init_train_state(rc.model, rc.train, rc.data);
  ck.autoslim = rc.autoslim;
  ck.search = rc.search;
  return ck;
}

/// Runs (or continues) training to the configured epoch count. With a
/// non-empty `save_path` the checkpoint is rewritten after every epoch.
inline void run_training(Checkpoint& ck, const DatasetSplits& data, std::ostream* log,
                         const std::string& save_path = {}) {
  EpochHook hook;
  if (!save_path.empty()) hook = [&](const TrainState&) { save_checkpoint(save_path, ck); };
  if (ck.autoslim) {
    warmup_then_search_then_continue(ck.state, data, ck.search, ck.found, log, hook);
  } else {
    train_epochs(ck.state, data, ck.state.train.epochs, log, hook);
  }
}

}  // namespace slimconv

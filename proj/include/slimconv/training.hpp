// SPDX-License-Identifier: Apache-2.0
#pragma once

// Joint training of every subnetwork in a menu over one shared ParamStore.
// Each step samples one p-list uniformly, runs forward/backward through that
// subnetwork only and updates the entries it read.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "slimconv/autodiff.hpp"
#include "slimconv/config.hpp"
#include "slimconv/data.hpp"
#include "slimconv/errors.hpp"
#include "slimconv/kv.hpp"
#include "slimconv/model.hpp"
#include "slimconv/ops.hpp"
#include "slimconv/optim.hpp"
#include "slimconv/param_store.hpp"
#include "slimconv/random.hpp"
#include "slimconv/slimming.hpp"

namespace slimconv {

/// Reference recipe: lr 4e-3 at batch 2048, scaled linearly with batch size
/// when `lr` is left at 0.
inline constexpr double kReferenceLr = 4e-3;
inline constexpr double kReferenceBatch = 2048.0;

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 128;
  double lr = 0.0;
  double weight_decay = 0.05;
  std::size_t warmup_epochs = 20;
  double label_smoothing = 0.1;
  double drop_path_rate = 0.1;
  double ema_decay = 0.9999;
  std::uint64_t seed = 0;
  std::size_t menu_size = 3;  // K for the default uniform menu
  std::string menu;           // explicit ';'-separated p-lists, overrides menu_size
  std::size_t eval_interval = 1;
  bool augment = true;
  bool eval_ema = false;

  double base_lr() const {
    return lr > 0.0 ? lr : kReferenceLr * static_cast<double>(batch_size) / kReferenceBatch;
  }

  void validate() const {
    if (epochs == 0) throw ConfigError("epochs must be >= 1");
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (warmup_epochs >= epochs) {
      throw ConfigError("warmup_epochs (" + std::to_string(warmup_epochs) +
                        ") must be smaller than epochs (" + std::to_string(epochs) + ")");
    }
    if (lr < 0.0) throw ConfigError("lr must be >= 0");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
    if (!(label_smoothing >= 0.0 && label_smoothing < 1.0))
      throw ConfigError("label_smoothing must lie in [0, 1)");
    if (!(drop_path_rate >= 0.0 && drop_path_rate < 1.0))
      throw ConfigError("drop_path_rate must lie in [0, 1)");
    if (!(ema_decay >= 0.0 && ema_decay <= 1.0)) throw ConfigError("ema_decay must lie in [0, 1]");
    if (eval_interval == 0) throw ConfigError("eval_interval must be >= 1");
  }

  static constexpr std::array<const char*, 14> keys = {
      "epochs",     "batch_size",  "lr",       "weight_decay", "warmup_epochs",
      "label_smoothing", "drop_path_rate", "ema_decay", "seed", "menu_size",
      "menu",       "eval_interval", "augment", "eval_ema"};

  KeyValues to_kv() const {
    KeyValues kv;
    kv.set_num("epochs", epochs);
    kv.set_num("batch_size", batch_size);
    kv.set_num("lr", lr);
    kv.set_num("weight_decay", weight_decay);
    kv.set_num("warmup_epochs", warmup_epochs);
    kv.set_num("label_smoothing", label_smoothing);
    kv.set_num("drop_path_rate", drop_path_rate);
    kv.set_num("ema_decay", ema_decay);
    kv.set_num("seed", seed);
    kv.set_num("menu_size", menu_size);
    kv.set("menu", menu);
    kv.set_num("eval_interval", eval_interval);
    kv.set("augment", augment ? "true" : "false");
    kv.set("eval_ema", eval_ema ? "true" : "false");
    return kv;
  }

  static TrainConfig from_kv(const KeyValues& kv);
  static TrainConfig from_kv(const KeyValues& kv, TrainConfig t) {
    t.epochs = kv.get_size_or("epochs", t.epochs);
    t.batch_size = kv.get_size_or("batch_size", t.batch_size);
    t.lr = kv.get_double_or("lr", t.lr);
    t.weight_decay = kv.get_double_or("weight_decay", t.weight_decay);
    t.warmup_epochs = kv.get_size_or("warmup_epochs", t.warmup_epochs);
    t.label_smoothing = kv.get_double_or("label_smoothing", t.label_smoothing);
    t.drop_path_rate = kv.get_double_or("drop_path_rate", t.drop_path_rate);
    t.ema_decay = kv.get_double_or("ema_decay", t.ema_decay);
    t.seed = kv.get_u64_or("seed", t.seed);
    t.menu_size = kv.get_size_or("menu_size", t.menu_size);
    t.menu = kv.get_or("menu", t.menu);
    t.eval_interval = kv.get_size_or("eval_interval", t.eval_interval);
    t.augment = kv.get_bool_or("augment", t.augment);
    t.eval_ema = kv.get_bool_or("eval_ema", t.eval_ema);
    t.validate();
    return t;
  }
};

inline TrainConfig TrainConfig::from_kv(const KeyValues& kv) { return from_kv(kv, TrainConfig{}); }

inline SubnetworkSet make_menu(const TrainConfig& t, const ModelConfig& m) {
  SubnetworkSet menu = t.menu.empty() ? uniform_plists(t.menu_size, m.num_blocks())
                                      : SubnetworkSet::parse(t.menu);
  for (auto& l : menu.lists) validate_plist(l, m.block_channels());
  menu.validate(m.block_channels());
  return menu;
}

// ---------------------------------------------------------------------------
// Single step

template <typename T>
struct GradResult {
  T loss{};
  ParamGrads<T> grads;
  AccessTracker tracker;
};

/// Loss and parameter gradients of one subnetwork on one batch.
template <typename T>
GradResult<T> compute_gradients(const ParamStore<T>& store, const ModelConfig& cfg,
                                const Tensor<T>& x, const std::vector<int>& y, const PList& plist,
                                Mode mode, Rng* rng, double label_smoothing) {
  GradResult<T> r{T{}, zero_grads(store), AccessTracker(store)};
  GradTape<T> tape;
  ForwardOptions<T> opt;
  opt.mode = mode;
  opt.rng = rng;
  opt.tracker = &r.tracker;
  opt.grads = &r.grads;
  Var in = tape.constant(x);
  Var logits = forward(tape, store, cfg, in, plist, opt);
  Var loss = ops::softmax_cross_entropy(tape, logits, y, static_cast<T>(label_smoothing));
  r.loss = tape.value(loss)[0];
  if (std::isfinite(static_cast<double>(r.loss))) tape.backward(loss);
  return r;
}

struct StepHyper {
  double lr = 0.0;
  double weight_decay = 0.05;
  double label_smoothing = 0.1;
  std::uint64_t step = 0;  // for diagnostics
};

template <typename T>
struct StepResult {
  T loss{};
  std::size_t k = 0;
};

/// One joint-training step: draw k uniformly from the menu (no draw when the
/// menu has a single entry), forward/backward through subnetwork k in train
/// mode, AdamW on the entries it read, then EMA over every parameter.
template <typename T>
StepResult<T> train_step(ParamStore<T>& store, const ModelConfig& cfg, const Tensor<T>& x,
                         const std::vector<int>& y, const SubnetworkSet& menu, Rng& rng,
                         OptimizerState<T>& opt, EmaState<T>* ema, const StepHyper& hp) {
  if (menu.size() == 0) throw ContractError("train_step: empty subnetwork menu");
  const std::size_t k = menu.size() > 1 ? static_cast<std::size_t>(rng.uniform_int(menu.size())) : 0;
  auto g = compute_gradients(store, cfg, x, y, menu[k], Mode::Train, &rng, hp.label_smoothing);
  if (!std::isfinite(static_cast<double>(g.loss))) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "non-finite loss at step=%llu k=%zu lr=%.6g",
                  static_cast<unsigned long long>(hp.step), k, hp.lr);
    throw NumericError(buf);
  }
  AdamWConfig ac;
  ac.weight_decay = hp.weight_decay;
  adamw_step(store, g.grads, &g.tracker, hp.lr, ac, opt);
  if (ema) ema->update(store);
  return {g.loss, k};
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalResult {
  std::size_t correct = 0;
  std::size_t total = 0;
  double loss = 0.0;  // mean unsmoothed cross-entropy

  double accuracy() const { return total ? static_cast<double>(correct) / total : 0.0; }
};

/// Index of the largest entry of each row; ties go to the lowest index.
template <typename T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& logits) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<std::size_t> out(n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 1; j < k; ++j)
      if (logits[i * k + j] > logits[i * k + out[i]]) out[i] = j;
  return out;
}

inline constexpr std::size_t kEvalBatch = 250;

template <typename T>
EvalResult evaluate(const ParamStore<T>& store, const ModelConfig& cfg, const PList& plist,
                    const Dataset& data, const DatasetSpec& norm) {
  if (data.size() == 0) throw ContractError("evaluate: dataset is empty");
  EvalResult r;
  std::vector<std::size_t> idx;
  std::vector<int> labels;
  for (std::size_t start = 0; start < data.size(); start += kEvalBatch) {
    const std::size_t end = std::min(data.size(), start + kEvalBatch);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor<T> x = make_batch<T>(data, idx, norm, &labels);
    const Tensor<T> logits = predict(store, cfg, x, plist);
    const auto pred = argmax_rows(logits);
    const std::size_t k = logits.dim(1);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      r.correct += pred[i] == static_cast<std::size_t>(labels[i]);
      double mx = logits[i * k];
      for (std::size_t j = 1; j < k; ++j) mx = std::max<double>(mx, logits[i * k + j]);
      double z = 0;
      for (std::size_t j = 0; j < k; ++j) z += std::exp(logits[i * k + j] - mx);
      r.loss += std::log(z) + mx - logits[i * k + labels[i]];
    }
    r.total += pred.size();
  }
  r.loss /= static_cast<double>(r.total);
  return r;
}

// ---------------------------------------------------------------------------
// Training loop

/// Everything needed to continue a run.
struct TrainState {
  ModelConfig model;
  TrainConfig train;
  DatasetSpec data;
  SubnetworkSet menu;
  ParamStore<float> params;
  OptimizerState<float> opt;
  EmaState<float> ema;
  Rng rng;
  std::size_t epoch = 0;  // completed epochs
  std::uint64_t step = 0;
};

inline std::size_t steps_per_epoch(std::size_t train_size, std::size_t batch) {
  return (train_size + batch - 1) / batch;
}

/// Fresh state: the model seed and the training stream both derive from
/// train.seed. The model's drop-path rate is taken from the train config.
inline TrainState init_train_state(ModelConfig model, const TrainConfig& train, const DatasetSpec& data) {
  train.validate();
  data.validate();
  model.drop_path_rate = train.drop_path_rate;
  model.validate();
  if (data.num_classes != model.num_classes) {
    throw ConfigError("dataset has " + std::to_string(data.num_classes) + " classes, model has " +
                      std::to_string(model.num_classes));
  }
  if (data.image_size != model.input_h || data.image_size != model.input_w) {
    throw ConfigError("image_size " + std::to_string(data.image_size) + " does not match model input " +
                      std::to_string(model.input_h) + "x" + std::to_string(model.input_w));
  }
  Rng root(train.seed);
  const std::uint64_t model_seed = root.next_u64();
  TrainState s{model, train, data, make_menu(train, model), build_model<float>(model, model_seed),
               {}, {}, Rng(root.next_u64())};
  s.opt = OptimizerState<float>::init(s.params);
  s.ema = EmaState<float>::init(s.params, train.ema_decay);
  return s;
}

/// "epoch=E step=S lr=L train_loss=X p0=.. loss0=.. acc0=.. p1=.." with one
/// (p, loss, acc) triple per menu entry, p being the list's mean ratio.
inline std::string format_eval_line(const TrainState& s, double lr, double train_loss,
                                    const std::vector<EvalResult>& evals) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "epoch=%zu step=%llu lr=%.6g train_loss=%.6f", s.epoch,
                static_cast<unsigned long long>(s.step), lr, train_loss);
  std::string line = buf;
  for (std::size_t i = 0; i < evals.size(); ++i) {
    std::snprintf(buf, sizeof buf, " p%zu=%s loss%zu=%.6f acc%zu=%.6f", i,
                  s.menu[i].label().c_str(), i, evals[i].loss, i, evals[i].accuracy());
    line += buf;
  }
  return line;
}

inline std::vector<EvalResult> evaluate_menu(const TrainState& s, const Dataset& val) {
  const ParamStore<float>& w = s.train.eval_ema ? s.ema.shadow : s.params;
  std::vector<EvalResult> out;
  for (const auto& l : s.menu.lists) out.push_back(evaluate(w, s.model, l, val, s.data));
  return out;
}

using EpochHook = std::function<void(const TrainState&)>;

/// Trains until `until_epoch` epochs are complete (capped at train.epochs),
/// logging one line per eval interval and after the final epoch. `on_epoch`
/// runs after every completed epoch.
inline void train_epochs(TrainState& s, const DatasetSplits& data, std::size_t until_epoch,
                         std::ostream* log, const EpochHook& on_epoch = {}) {
  const Dataset& tr = data.train;
  if (tr.size() == 0) throw ContractError("train: training split is empty");
  until_epoch = std::min(until_epoch, s.train.epochs);
  const std::size_t spe = steps_per_epoch(tr.size(), s.train.batch_size);
  const std::size_t total = spe * s.train.epochs;
  const std::size_t warmup = spe * s.train.warmup_epochs;
  std::vector<std::size_t> perm(tr.size());
  std::vector<int> labels;
  while (s.epoch < until_epoch) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[s.rng.uniform_int(i)]);
    double loss_sum = 0.0;
    double lr = 0.0;
    for (std::size_t b = 0; b < spe; ++b) {
      const std::size_t start = b * s.train.batch_size;
      const std::size_t end = std::min(perm.size(), start + s.train.batch_size);
      std::span<const std::size_t> idx(perm.data() + start, end - start);
      Tensor<float> x = make_batch<float>(tr, idx, s.data, &labels);
      if (s.train.augment) augment(x, s.rng);
      lr = lr_at(s.step, total, warmup, s.train.base_lr());
      const StepHyper hp{lr, s.train.weight_decay, s.train.label_smoothing, s.step};
      const auto r = train_step(s.params, s.model, x, labels, s.menu, s.rng, s.opt, &s.ema, hp);
      loss_sum += r.loss;
      ++s.step;
    }
    ++s.epoch;
    if (log && (s.epoch % s.train.eval_interval == 0 || s.epoch == s.train.epochs)) {
      *log << format_eval_line(s, lr, loss_sum / spe, evaluate_menu(s, data.val)) << std::endl;
    }
    if (on_epoch) on_epoch(s);
  }
}

}  // namespace slimconv

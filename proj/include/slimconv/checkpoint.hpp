// SPDX-License-Identifier: Apache-2.0
#pragma once

// Checkpoint container:
//
//   "SLNX" | u32 version | u32 header_len | header (key=value text)
//   | zero padding to a 64-byte boundary | tensor payloads
//
// Payloads are little-endian f32, each starting at a 64-byte aligned offset
// relative to the payload base. Every tensor has a directory line
//   tensor.<i>=<section> <name> <kind> <trainable> <d0xd1x..> <offset> <bytes> <fnv1a>
// Sections: param, ema, adam_m, adam_v.

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "slimconv/errors.hpp"
#include "slimconv/kv.hpp"
#include "slimconv/model.hpp"
#include "slimconv/search.hpp"
#include "slimconv/training.hpp"

namespace slimconv {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::size_t kPayloadAlign = 64;

struct Checkpoint {
  TrainState state;
  bool has_optimizer = true;
  bool has_ema = true;
  bool autoslim = false;
  SearchConfig search;
  std::vector<FoundList> found;
};

namespace detail {

inline std::uint64_t fnv1a(const unsigned char* p, std::size_t n) {
  std::uint64_t h = 1469598103934665603ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline std::size_t align_up(std::size_t n) { return (n + kPayloadAlign - 1) / kPayloadAlign * kPayloadAlign; }

inline void append_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void append_f32(std::vector<unsigned char>& out, const Tensor<float>& t) {
  const std::size_t base = out.size();
  out.resize(base + t.numel() * 4);
  for (std::size_t i = 0; i < t.numel(); ++i) {
    const auto u = std::bit_cast<std::uint32_t>(t[i]);
    for (int b = 0; b < 4; ++b) out[base + 4 * i + b] = static_cast<unsigned char>(u >> (8 * b));
  }
}

inline Tensor<float> read_f32(const unsigned char* p, Shape shape) {
  Tensor<float> t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = std::bit_cast<float>(get_u32(p + 4 * i));
  return t;
}

inline KeyValues with_prefix(const KeyValues& kv, const std::string& prefix) {
  KeyValues out;
  for (const auto& [k, v] : kv.entries()) out.set(prefix + k, v);
  return out;
}

inline KeyValues strip_prefix(const KeyValues& kv, const std::string& prefix) {
  KeyValues out;
  for (const auto& [k, v] : kv.entries())
    if (k.rfind(prefix, 0) == 0) out.set(k.substr(prefix.size()), v);
  return out;
}

inline void merge(KeyValues& dst, const KeyValues& src) {
  for (const auto& [k, v] : src.entries()) dst.set(k, v);
}

struct DirEntry {
  std::string section;
  std::string name;
  ParamKind kind = ParamKind::Weight;
  bool trainable = true;
  Shape shape;
  std::size_t offset = 0;
  std::size_t bytes = 0;
  std::uint64_t checksum = 0;
};

inline std::string shape_token(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

inline DirEntry parse_dir_entry(const std::string& key, const std::string& line) {
  std::istringstream is(line);
  DirEntry e;
  std::string kind, trainable, shape, sum;
  if (!(is >> e.section >> e.name >> kind >> trainable >> shape >> e.offset >> e.bytes >> sum)) {
    throw FormatError("checkpoint: malformed directory entry " + key);
  }
  e.kind = param_kind_from_name(kind);
  e.trainable = trainable == "1";
  std::stringstream ss(shape);
  std::string d;
  while (std::getline(ss, d, 'x')) e.shape.push_back(KeyValues::to_size(key, d));
  e.checksum = std::stoull(sum, nullptr, 16);
  return e;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  const TrainState& s = ck.state;
  KeyValues h;
  h.set("format", "slimconv-checkpoint");
  detail::merge(h, detail::with_prefix(model_config_to_kv(s.model), "model."));
  detail::merge(h, detail::with_prefix(s.train.to_kv(), "train."));
  detail::merge(h, detail::with_prefix(s.data.to_kv(), "data."));
  h.set("autoslim", ck.autoslim ? "true" : "false");
  detail::merge(h, detail::with_prefix(ck.search.to_kv(), "search."));
  h.set("menu", s.menu.to_string());
  h.set_num("found_count", ck.found.size());
  for (std::size_t i = 0; i < ck.found.size(); ++i) {
    h.set("found." + std::to_string(i),
          PList::format_ratio(ck.found[i].target_pbar) + " " + ck.found[i].plist.to_string());
  }
  h.set_num("progress.epoch", s.epoch);
  h.set_num("progress.step", s.step);
  h.set("rng", s.rng.state());
  h.set("has_optimizer", ck.has_optimizer ? "true" : "false");
  h.set_num("opt.step", s.opt.step);
  h.set("has_ema", ck.has_ema ? "true" : "false");
  h.set_num("ema.decay", s.ema.decay);

  std::vector<unsigned char> payload;
  std::size_t count = 0;
  auto add = [&](const std::string& section, const Param<float>& p, const Tensor<float>& t) {
    payload.resize(detail::align_up(payload.size()), 0);
    const std::size_t offset = payload.size();
    detail::append_f32(payload, t);
    char sum[17];
    std::snprintf(sum, sizeof sum, "%016llx",
                  static_cast<unsigned long long>(detail::fnv1a(payload.data() + offset, t.numel() * 4)));
    h.set("tensor." + std::to_string(count++),
          section + " " + p.name + " " + param_kind_name(p.kind) + " " + (p.trainable ? "1" : "0") +
              " " + detail::shape_token(t.shape()) + " " + std::to_string(offset) + " " +
              std::to_string(t.numel() * 4) + " " + sum);
  };
  for (const auto& p : s.params) add("param", p, p.value);
  if (ck.has_ema) {
    for (std::size_t i = 0; i < s.params.size(); ++i) add("ema", s.params[i], s.ema.shadow[i].value);
  }
  if (ck.has_optimizer) {
    for (std::size_t i = 0; i < s.params.size(); ++i) add("adam_m", s.params[i], s.opt.m[i]);
    for (std::size_t i = 0; i < s.params.size(); ++i) add("adam_v", s.params[i], s.opt.v[i]);
  }
  h.set_num("tensor_count", count);

  std::string head = "SLNX";
  const std::string text = h.to_string();
  detail::append_u32(head, kCheckpointVersion);
  detail::append_u32(head, static_cast<std::uint32_t>(text.size()));
  head += text;
  head.resize(detail::align_up(head.size()), '\0');

  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open '" + tmp + "' for writing");
    os.write(head.data(), static_cast<std::streamsize>(head.size()));
    os.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    if (!os) throw IoError("write failed for '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    std::remove(tmp.c_str());
    throw IoError("cannot move checkpoint into place at '" + path + "'");
  }
}

/// Payload lengths are always validated against the directory; per-tensor
/// checksums only when `verify_checksum` is set.
inline Checkpoint load_checkpoint(const std::string& path, bool verify_checksum = false) {
  const auto bytes = detail::read_file(path);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "SLNX", 4) != 0)
    throw FormatError("'" + path + "' is not a checkpoint (bad magic)");
  if (bytes.size() < 12) throw IntegrityError("'" + path + "': truncated checkpoint header");
  const std::uint32_t version = detail::get_u32(&bytes[4]);
  if (version != kCheckpointVersion) {
    throw FormatError("'" + path + "': unsupported checkpoint version " + std::to_string(version) +
                      " (reader supports " + std::to_string(kCheckpointVersion) + ")");
  }
  const std::size_t hlen = detail::get_u32(&bytes[8]);
  if (bytes.size() < 12 + hlen) throw IntegrityError("'" + path + "': truncated checkpoint header");
  const KeyValues h = KeyValues::parse(
      std::string(reinterpret_cast<const char*>(&bytes[12]), hlen), path);
  if (h.get_or("format", "") != "slimconv-checkpoint")
    throw FormatError("'" + path + "': unknown header format");
  const std::size_t base = detail::align_up(12 + hlen);

  Checkpoint ck;
  TrainState& s = ck.state;
  try {
    s.model = model_config_from_kv(detail::strip_prefix(h, "model."), ModelConfig{});
    s.train = TrainConfig::from_kv(detail::strip_prefix(h, "train."));
    s.data = DatasetSpec::from_kv(detail::strip_prefix(h, "data."));
    ck.search = SearchConfig::from_kv(detail::strip_prefix(h, "search."));
    ck.autoslim = h.get_bool_or("autoslim", false);
    s.menu = SubnetworkSet::parse(h.get("menu"));
    const std::size_t nf = h.get_size("found_count");
    for (std::size_t i = 0; i < nf; ++i) {
      const std::string& line = h.get("found." + std::to_string(i));
      const auto sp = line.find(' ');
      if (sp == std::string::npos) throw FormatError("'" + path + "': malformed found list");
      ck.found.push_back({KeyValues::to_double("found", line.substr(0, sp)), PList::parse(line.substr(sp + 1))});
    }
    s.epoch = h.get_size("progress.epoch");
    s.step = h.get_u64_or("progress.step", 0);
    s.rng.set_state(h.get("rng"));
    ck.has_optimizer = h.get_bool_or("has_optimizer", false);
    ck.has_ema = h.get_bool_or("has_ema", false);
    s.opt.step = h.get_u64_or("opt.step", 0);
    s.ema.decay = h.get_double_or("ema.decay", s.train.ema_decay);
  } catch (const ConfigError& e) {
    throw FormatError("'" + path + "': bad checkpoint header: " + e.what());
  }

  const std::size_t count = h.get_size("tensor_count");
  for (std::size_t i = 0; i < count; ++i) {
    const std::string key = "tensor." + std::to_string(i);
    const auto e = detail::parse_dir_entry(key, h.get(key));
    if (e.bytes != shape_numel(e.shape) * 4) {
      throw IntegrityError("'" + path + "': tensor " + e.name + " declares " + std::to_string(e.bytes) +
                           " bytes for shape " + shape_str(e.shape));
    }
    if (base + e.offset + e.bytes > bytes.size()) {
      throw IntegrityError("'" + path + "': truncated payload for " + e.section + " tensor " + e.name);
    }
    const unsigned char* p = bytes.data() + base + e.offset;
    if (verify_checksum && detail::fnv1a(p, e.bytes) != e.checksum) {
      throw IntegrityError("'" + path + "': checksum mismatch for " + e.section + " tensor " + e.name);
    }
    Tensor<float> t = detail::read_f32(p, e.shape);
    if (e.section == "param") {
      s.params.add(e.name, std::move(t), e.kind, e.trainable);
    } else if (e.section == "ema") {
      s.ema.shadow.add(e.name, std::move(t), e.kind, e.trainable);
    } else if (e.section == "adam_m") {
      s.opt.m.push_back(std::move(t));
    } else if (e.section == "adam_v") {
      s.opt.v.push_back(std::move(t));
    } else {
      throw FormatError("'" + path + "': unknown tensor section '" + e.section + "'");
    }
  }
  if (s.params.size() == 0) throw FormatError("'" + path + "': checkpoint holds no parameters");
  const auto check_parallel = [&](std::size_t n, const char* what) {
    if (n != s.params.size()) {
      throw IntegrityError("'" + path + "': " + what + " has " + std::to_string(n) +
                           " tensors, expected " + std::to_string(s.params.size()));
    }
  };
  if (ck.has_ema) check_parallel(s.ema.shadow.size(), "ema section");
  if (ck.has_optimizer) {
    check_parallel(s.opt.m.size(), "adam_m section");
    check_parallel(s.opt.v.size(), "adam_v section");
  } else {
    s.opt = OptimizerState<float>::init(s.params);
  }
  if (!ck.has_ema) s.ema = EmaState<float>::init(s.params, s.train.ema_decay);
  const auto layout = param_layout(s.model);
  if (layout.size() != s.params.size()) {
    throw FormatError("'" + path + "': parameter count does not match the stored model config");
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (layout[i].name != s.params[i].name || layout[i].shape != s.params[i].value.shape()) {
      throw FormatError("'" + path + "': parameter " + s.params[i].name +
                        " does not match the stored model config");
    }
  }
  return ck;
}

}  // namespace slimconv

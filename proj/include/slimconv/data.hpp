// SPDX-License-Identifier: Apache-2.0
#pragma once

// Image datasets held as u8 HWC pixels plus integer labels. Three sources:
// a procedural shapes generator, packed binary split files and a directory
// of binary PPM images.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "slimconv/errors.hpp"
#include "slimconv/kv.hpp"
#include "slimconv/random.hpp"
#include "slimconv/tensor.hpp"

namespace slimconv {

struct Dataset {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 3;
  std::size_t num_classes = 0;
  std::vector<std::uint8_t> pixels;  // N * H * W * C
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t image_bytes() const noexcept { return height * width * channels; }
  std::span<const std::uint8_t> image(std::size_t i) const {
    return {pixels.data() + i * image_bytes(), image_bytes()};
  }

  void validate() const {
    if (pixels.size() != labels.size() * image_bytes()) {
      throw FormatError("dataset: pixel buffer holds " + std::to_string(pixels.size()) +
                        " bytes, expected " + std::to_string(labels.size() * image_bytes()));
    }
    for (int y : labels) {
      if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
        throw FormatError("dataset: label " + std::to_string(y) + " outside [0, " +
                          std::to_string(num_classes) + ")");
      }
    }
  }

  /// Rows picked by `idx`, in that order.
  Dataset subset(const std::vector<std::size_t>& idx) const {
    Dataset out{height, width, channels, num_classes, {}, {}};
    out.pixels.reserve(idx.size() * image_bytes());
    for (std::size_t i : idx) {
      auto img = image(i);
      out.pixels.insert(out.pixels.end(), img.begin(), img.end());
      out.labels.push_back(labels.at(i));
    }
    return out;
  }
};

struct DatasetSplits {
  Dataset train;
  Dataset val;
  Dataset test;
};

struct DatasetSpec {
  std::string source = "synthetic";  // synthetic | packed | rawdir
  std::string path;                  // packed: file prefix; rawdir: root directory
  std::size_t image_size = 32;
  std::size_t num_classes = 10;
  std::size_t train_size = 2000;
  std::size_t val_size = 500;
  std::size_t test_size = 500;
  std::uint64_t data_seed = 1234;
  double norm_mean = 0.5;
  double norm_std = 0.25;

  void validate() const {
    if (source != "synthetic" && source != "packed" && source != "rawdir")
      throw ConfigError("source must be synthetic, packed or rawdir, got '" + source + "'");
    if (source != "synthetic" && path.empty()) throw ConfigError("source '" + source + "' needs a path");
    if (image_size == 0) throw ConfigError("image_size must be >= 1");
    if (num_classes == 0) throw ConfigError("num_classes must be >= 1");
    if (!(norm_std > 0.0)) throw ConfigError("norm_std must be > 0");
  }

  static constexpr std::array<const char*, 10> keys = {
      "source",   "path",      "image_size", "num_classes", "train_size",
      "val_size", "test_size", "data_seed",  "norm_mean",   "norm_std"};

  KeyValues to_kv() const {
    KeyValues kv;
    kv.set("source", source);
    kv.set("path", path);
    kv.set_num("image_size", image_size);
    kv.set_num("num_classes", num_classes);
    kv.set_num("train_size", train_size);
    kv.set_num("val_size", val_size);
    kv.set_num("test_size", test_size);
    kv.set_num("data_seed", data_seed);
    kv.set_num("norm_mean", norm_mean);
    kv.set_num("norm_std", norm_std);
    return kv;
  }

  static DatasetSpec from_kv(const KeyValues& kv);
  static DatasetSpec from_kv(const KeyValues& kv, DatasetSpec d) {
    d.source = kv.get_or("source", d.source);
    d.path = kv.get_or("path", d.path);
    d.image_size = kv.get_size_or("image_size", d.image_size);
    d.num_classes = kv.get_size_or("num_classes", d.num_classes);
    d.train_size = kv.get_size_or("train_size", d.train_size);
    d.val_size = kv.get_size_or("val_size", d.val_size);
    d.test_size = kv.get_size_or("test_size", d.test_size);
    d.data_seed = kv.get_u64_or("data_seed", d.data_seed);
    d.norm_mean = kv.get_double_or("norm_mean", d.norm_mean);
    d.norm_std = kv.get_double_or("norm_std", d.norm_std);
    d.validate();
    return d;
  }
};

inline DatasetSpec DatasetSpec::from_kv(const KeyValues& kv) { return from_kv(kv, DatasetSpec{}); }

// ---------------------------------------------------------------------------
// Synthetic shapes

inline constexpr std::size_t kNumShapes = 10;

inline const char* shape_name(std::size_t s) {
  static constexpr std::array<const char*, kNumShapes> names = {
      "disc", "square", "triangle", "plus", "ring", "hbar", "vbar", "cross", "diamond", "frame"};
  return names.at(s);
}

/// Membership test in shape-local coordinates scaled so the shape fits in
/// [-1, 1]^2.
inline bool shape_contains(std::size_t s, double u, double v) {
  const double au = std::abs(u), av = std::abs(v);
  const double r = std::sqrt(u * u + v * v);
  const double box = std::max(au, av);
  switch (s) {
    case 0: return r <= 1.0;
    case 1: return box <= 0.8;
    case 2: return v >= -0.9 && v <= 0.9 && au <= 0.5 * (v + 0.9);
    case 3: return (au <= 0.28 && av <= 1.0) || (av <= 0.28 && au <= 1.0);
    case 4: return r >= 0.55 && r <= 1.0;
    case 5: return au <= 1.0 && av <= 0.35;
    case 6: return au <= 0.35 && av <= 1.0;
    case 7: return box <= 0.95 && (std::abs(u - v) <= 0.4 || std::abs(u + v) <= 0.4);
    case 8: return au + av <= 1.0;
    case 9: return box <= 0.95 && box >= 0.6;
    default: throw ContractError("shape index out of range");
  }
}

/// Draws `count` images with balanced labels (i mod num_classes). Each image
/// is a noisy tinted background with one colored shape at a random position
/// and scale.
inline Dataset generate_shapes(std::size_t count, std::size_t size, std::size_t num_classes,
                               Rng& rng) {
  if (num_classes == 0 || num_classes > kNumShapes) {
    throw ConfigError("synthetic shapes support 1.." + std::to_string(kNumShapes) + " classes");
  }
  if (size < 8) throw ConfigError("synthetic shapes need image_size >= 8");
  Dataset d{size, size, 3, num_classes, {}, {}};
  d.pixels.resize(count * size * size * 3);
  d.labels.resize(count);
  for (std::size_t n = 0; n < count; ++n) {
    const int label = static_cast<int>(n % num_classes);
    d.labels[n] = label;
    std::array<double, 3> bg{}, fg{};
    for (auto& c : bg) c = 40.0 + 60.0 * rng.uniform();
    for (auto& c : fg) c = 120.0 + 135.0 * rng.uniform();
    const double radius = size * (0.22 + 0.16 * rng.uniform());
    const double lo = radius, hi = size - radius;
    const double cy = lo + (hi - lo) * rng.uniform();
    const double cx = lo + (hi - lo) * rng.uniform();
    std::uint8_t* img = d.pixels.data() + n * size * size * 3;
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        const double u = (x + 0.5 - cx) / radius, v = (y + 0.5 - cy) / radius;
        const bool in = shape_contains(static_cast<std::size_t>(label), u, v);
        for (std::size_t c = 0; c < 3; ++c) {
          const double noise = 50.0 * (rng.uniform() - 0.5);
          const double val = (in ? fg[c] : bg[c]) + noise;
          img[(y * size + x) * 3 + c] = static_cast<std::uint8_t>(std::clamp(val, 0.0, 255.0));
        }
      }
  }
  return d;
}

/// Train, val and test come from independent streams of one seed.
inline DatasetSplits generate_synthetic_dataset(const DatasetSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng root(seed);
  Rng r_train(root.next_u64()), r_val(root.next_u64()), r_test(root.next_u64());
  return {generate_shapes(spec.train_size, spec.image_size, spec.num_classes, r_train),
          generate_shapes(spec.val_size, spec.image_size, spec.num_classes, r_val),
          generate_shapes(spec.test_size, spec.image_size, spec.num_classes, r_test)};
}

// ---------------------------------------------------------------------------
// Packed binary split files
//
//   "SLDS" | u32 version | u32 count | u32 height | u32 width | u32 channels |
//   u32 num_classes | count x u16 label | count x H x W x C u8 pixels
// All integers little-endian.

inline constexpr std::uint32_t kPackedVersion = 1;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(const unsigned char* b) {
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

inline void write_packed(const std::string& path, const Dataset& d) {
  d.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os.write("SLDS", 4);
  for (std::size_t v : {std::size_t{kPackedVersion}, d.size(), d.height, d.width, d.channels,
                        d.num_classes})
    detail::put_u32(os, static_cast<std::uint32_t>(v));
  for (int y : d.labels) {
    const unsigned char b[2] = {static_cast<unsigned char>(y), static_cast<unsigned char>(y >> 8)};
    os.write(reinterpret_cast<const char*>(b), 2);
  }
  os.write(reinterpret_cast<const char*>(d.pixels.data()), static_cast<std::streamsize>(d.pixels.size()));
  if (!os) throw IoError("write failed for '" + path + "'");
}

inline Dataset read_packed(const std::string& path) {
  const auto bytes = detail::read_file(path);
  if (bytes.size() < 28 || std::string(bytes.begin(), bytes.begin() + 4) != "SLDS")
    throw FormatError("'" + path + "' is not a packed dataset (bad magic)");
  const std::uint32_t version = detail::get_u32(&bytes[4]);
  if (version != kPackedVersion) {
    throw FormatError("'" + path + "': unsupported packed dataset version " +
                      std::to_string(version) + " (reader supports " +
                      std::to_string(kPackedVersion) + ")");
  }
  Dataset d;
  const std::size_t count = detail::get_u32(&bytes[8]);
  d.height = detail::get_u32(&bytes[12]);
  d.width = detail::get_u32(&bytes[16]);
  d.channels = detail::get_u32(&bytes[20]);
  d.num_classes = detail::get_u32(&bytes[24]);
  const std::size_t need = 28 + 2 * count + count * d.image_bytes();
  if (bytes.size() != need) {
    throw IntegrityError("'" + path + "': expected " + std::to_string(need) + " bytes, found " +
                         std::to_string(bytes.size()));
  }
  d.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i)
    d.labels[i] = bytes[28 + 2 * i] | bytes[29 + 2 * i] << 8;
  d.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(28 + 2 * count), bytes.end());
  d.validate();
  return d;
}

inline std::string packed_split_path(const std::string& prefix, const std::string& split) {
  return prefix + "_" + split + ".bin";
}

// ---------------------------------------------------------------------------
// Directory of binary PPM (P6, maxval 255) files: root/<split>/<class>/*.ppm

inline std::vector<std::uint8_t> read_ppm(const std::string& path, std::size_t& w, std::size_t& h) {
  const auto bytes = detail::read_file(path);
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t += static_cast<char>(bytes[pos++]);
    return t;
  };
  if (token() != "P6") throw FormatError("'" + path + "' is not a binary PPM (P6)");
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    if (std::stoul(token()) != 255) throw FormatError("'" + path + "': only maxval 255 is supported");
  } catch (const std::logic_error&) {
    throw FormatError("'" + path + "': malformed PPM header");
  }
  ++pos;  // single whitespace before the raster
  if (bytes.size() < pos + w * h * 3) throw IntegrityError("'" + path + "': truncated PPM raster");
  return {bytes.begin() + static_cast<std::ptrdiff_t>(pos),
          bytes.begin() + static_cast<std::ptrdiff_t>(pos + w * h * 3)};
}

inline void write_ppm(const std::string& path, std::span<const std::uint8_t> rgb, std::size_t w,
                      std::size_t h) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << "P6\n" << w << ' ' << h << "\n255\n";
  os.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
}

/// Class subdirectories must be named 0 .. num_classes-1. Files are read in
/// sorted name order.
inline Dataset read_ppm_dir(const std::string& dir, std::size_t image_size, std::size_t num_classes) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("'" + dir + "' is not a directory");
  Dataset d{image_size, image_size, 3, num_classes, {}, {}};
  for (std::size_t c = 0; c < num_classes; ++c) {
    const fs::path cdir = fs::path(dir) / std::to_string(c);
    if (!fs::is_directory(cdir)) continue;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(cdir))
      if (e.path().extension() == ".ppm") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      std::size_t w = 0, h = 0;
      auto px = read_ppm(f.string(), w, h);
      if (w != image_size || h != image_size) {
        throw FormatError("'" + f.string() + "' is " + std::to_string(w) + "x" + std::to_string(h) +
                          ", expected " + std::to_string(image_size) + "x" + std::to_string(image_size));
      }
      d.pixels.insert(d.pixels.end(), px.begin(), px.end());
      d.labels.push_back(static_cast<int>(c));
    }
  }
  return d;
}

inline DatasetSplits load_dataset(const DatasetSpec& spec) {
  spec.validate();
  DatasetSplits s;
  if (spec.source == "synthetic") {
    s = generate_synthetic_dataset(spec, spec.data_seed);
  } else if (spec.source == "packed") {
    s = {read_packed(packed_split_path(spec.path, "train")),
         read_packed(packed_split_path(spec.path, "val")),
         read_packed(packed_split_path(spec.path, "test"))};
  } else {
    const std::string root = spec.path;
    s = {read_ppm_dir(root + "/train", spec.image_size, spec.num_classes),
         read_ppm_dir(root + "/val", spec.image_size, spec.num_classes),
         read_ppm_dir(root + "/test", spec.image_size, spec.num_classes)};
  }
  for (Dataset* d : {&s.train, &s.val, &s.test}) {
    if (d->size() && (d->height != spec.image_size || d->width != spec.image_size)) {
      throw ConfigError("dataset images are " + std::to_string(d->height) + "x" +
                        std::to_string(d->width) + " but image_size is " +
                        std::to_string(spec.image_size));
    }
    if (d->size() && d->num_classes != spec.num_classes) {
      throw ConfigError("dataset has " + std::to_string(d->num_classes) +
                        " classes but num_classes is " + std::to_string(spec.num_classes));
    }
  }
  return s;
}

/// Fixed-seed sample of round(fraction * size) rows, kept in ascending order.
inline Dataset sample_subset(const Dataset& d, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("subset fraction must lie in (0, 1]");
  const std::size_t n = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(fraction * d.size())));
  std::vector<std::size_t> idx(d.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(seed);
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.uniform_int(i)]);
  idx.resize(std::min(n, idx.size()));
  std::sort(idx.begin(), idx.end());
  return d.subset(idx);
}

// ---------------------------------------------------------------------------
// Batching and augmentation

/// (B, H, W, C) tensor of (u8 / 255 - mean) / std for the rows `idx`.
template <typename T>
Tensor<T> make_batch(const Dataset& d, std::span<const std::size_t> idx, const DatasetSpec& spec,
                     std::vector<int>* labels = nullptr) {
  Tensor<T> x({idx.size(), d.height, d.width, d.channels});
  const double scale = 1.0 / (255.0 * spec.norm_std), shift = spec.norm_mean / spec.norm_std;
  const std::size_t per = d.image_bytes();
  if (labels) labels->clear();
  for (std::size_t b = 0; b < idx.size(); ++b) {
    auto img = d.image(idx[b]);
    for (std::size_t i = 0; i < per; ++i) x[b * per + i] = static_cast<T>(img[i] * scale - shift);
    if (labels) labels->push_back(d.labels[idx[b]]);
  }
  return x;
}

template <typename T>
void flip_horizontal(Tensor<T>& batch, std::size_t sample) {
  const std::size_t h = batch.dim(1), w = batch.dim(2), c = batch.dim(3);
  T* base = batch.data() + sample * h * w * c;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w / 2; ++x)
      for (std::size_t ch = 0; ch < c; ++ch)
        std::swap(base[(y * w + x) * c + ch], base[(y * w + (w - 1 - x)) * c + ch]);
}

/// Crops an H x W window at (oy, ox) from the sample zero-padded by `pad` on
/// every side. (pad, pad) is the identity.
template <typename T>
void crop_padded(Tensor<T>& batch, std::size_t sample, std::size_t oy, std::size_t ox, std::size_t pad) {
  const std::size_t h = batch.dim(1), w = batch.dim(2), c = batch.dim(3);
  if (oy > 2 * pad || ox > 2 * pad) throw ContractError("crop offset exceeds padding");
  T* base = batch.data() + sample * h * w * c;
  const std::vector<T> src(base, base + h * w * c);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const long sy = static_cast<long>(y + oy) - static_cast<long>(pad);
      const long sx = static_cast<long>(x + ox) - static_cast<long>(pad);
      const bool inside = sy >= 0 && sy < static_cast<long>(h) && sx >= 0 && sx < static_cast<long>(w);
      for (std::size_t ch = 0; ch < c; ++ch)
        base[(y * w + x) * c + ch] = inside ? src[(static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)) * c + ch] : T{0};
    }
}

/// Per sample: horizontal flip with probability 0.5, then a random crop from
/// the image zero-padded by `pad` pixels.
template <typename T>
void augment(Tensor<T>& batch, Rng& rng, std::size_t pad = 4) {
  for (std::size_t i = 0; i < batch.dim(0); ++i) {
    if (rng.bernoulli(0.5)) flip_horizontal(batch, i);
    const std::size_t oy = rng.uniform_int(2 * pad + 1);
    const std::size_t ox = rng.uniform_int(2 * pad + 1);
    if (pad) crop_padded(batch, i, oy, ox, pad);
  }
}

}  // namespace slimconv

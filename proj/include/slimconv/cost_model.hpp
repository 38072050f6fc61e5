// SPDX-License-Identifier: Apache-2.0
#pragma once

// Analytic MAC and parameter counts. A MAC is one multiply-accumulate of a
// convolution or linear layer; LayerNorm, GELU, pooling and residual adds are
// not counted. Depthwise convolutions count all k*k taps at every output
// position, padding included, matching the kernel counters.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <vector>

#include "slimconv/config.hpp"
#include "slimconv/slimming.hpp"

namespace slimconv {

struct CostOptions {
  std::size_t input_h = 224;
  std::size_t input_w = 224;
  /// Also slim the stem, downsamplers and head to the widest active block
  /// width of the adjacent stage. Off by default: interfaces stay full width.
  bool interface_slimming = false;
};

struct CostReport {
  std::uint64_t stem_macs = 0;
  std::vector<std::uint64_t> downsample_macs;  // one per stage transition (3)
  std::vector<std::uint64_t> block_macs;       // one per block
  std::uint64_t head_macs = 0;
  std::uint64_t total_macs = 0;
  std::uint64_t params = 0;

  double gmacs() const { return static_cast<double>(total_macs) * 1e-9; }
};

/// MACs of one block with c active channels on an h x w map:
/// h*w*(k^2*c + c*4c + 4c*c).
inline std::uint64_t block_macs_active(std::size_t c, std::size_t h, std::size_t w) {
  const std::uint64_t cc = c;
  return static_cast<std::uint64_t>(h) * w *
         (kBlockKernel * kBlockKernel * cc + 2 * kExpansion * cc * cc);
}

inline std::uint64_t block_macs(std::size_t channels, std::size_t h, std::size_t w, double p) {
  return block_macs_active(active_channels(p, channels), h, w);
}

/// Parameter entries a block with c active channels reads.
inline std::uint64_t block_params_active(std::size_t c, bool layer_scale) {
  const std::uint64_t cc = c, e = kExpansion * cc;
  std::uint64_t n = kBlockKernel * kBlockKernel * cc + cc;  // depthwise
  n += 2 * cc;                                             // norm
  n += cc * e + e;                                         // expand
  n += e * cc + cc;                                        // project
  if (layer_scale) n += cc;
  return n;
}

namespace detail {

/// Width each stage interface runs at.
inline std::vector<std::size_t> interface_widths(const ModelConfig& cfg,
                                                 const std::vector<std::size_t>& widths,
                                                 bool slim) {
  std::vector<std::size_t> out(cfg.dims.begin(), cfg.dims.end());
  if (!slim) return out;
  std::size_t bi = 0;
  for (std::size_t s = 0; s < kNumStages; ++s) {
    std::size_t m = 0;
    for (std::size_t b = 0; b < cfg.depths[s]; ++b, ++bi) m = std::max(m, widths[bi]);
    out[s] = m;
  }
  return out;
}

}  // namespace detail

inline std::uint64_t active_params(const ModelConfig& cfg, const PList& plist,
                                   bool interface_slimming = false);

inline CostReport model_macs(const ModelConfig& cfg, const PList& plist,
                             const CostOptions& opt = {}) {
  const auto widths = active_widths(plist, cfg.block_channels());
  const auto iw = detail::interface_widths(cfg, widths, opt.interface_slimming);
  CostReport r;
  std::size_t h = opt.input_h / kStemStride, w = opt.input_w / kStemStride;
  r.stem_macs = static_cast<std::uint64_t>(h) * w * kStemStride * kStemStride * cfg.in_channels * iw[0];
  std::size_t bi = 0;
  for (std::size_t s = 0; s < kNumStages; ++s) {
    if (s > 0) {
      h /= kDownsampleStride;
      w /= kDownsampleStride;
      r.downsample_macs.push_back(static_cast<std::uint64_t>(h) * w * kDownsampleStride *
                                  kDownsampleStride * iw[s - 1] * iw[s]);
    }
    for (std::size_t b = 0; b < cfg.depths[s]; ++b, ++bi)
      r.block_macs.push_back(block_macs_active(widths[bi], h, w));
  }
  r.head_macs = static_cast<std::uint64_t>(iw[3]) * cfg.num_classes;
  r.total_macs = r.stem_macs + r.head_macs;
  for (auto m : r.downsample_macs) r.total_macs += m;
  for (auto m : r.block_macs) r.total_macs += m;
  r.params = active_params(cfg, plist, opt.interface_slimming);
  return r;
}

/// Parameter entries read by a forward pass under `plist`.
inline std::uint64_t active_params(const ModelConfig& cfg, const PList& plist,
                                   bool interface_slimming) {
  const auto widths = active_widths(plist, cfg.block_channels());
  const auto iw = detail::interface_widths(cfg, widths, interface_slimming);
  std::uint64_t n = 0;
  n += static_cast<std::uint64_t>(kStemStride) * kStemStride * cfg.in_channels * iw[0] + iw[0];
  n += 2ull * iw[0];
  std::size_t bi = 0;
  for (std::size_t s = 0; s < kNumStages; ++s) {
    if (s > 0) {
      n += 2ull * iw[s - 1];
      n += static_cast<std::uint64_t>(kDownsampleStride) * kDownsampleStride * iw[s - 1] * iw[s] +
           iw[s];
    }
    for (std::size_t b = 0; b < cfg.depths[s]; ++b, ++bi)
      n += block_params_active(widths[bi], cfg.layer_scale);
  }
  n += 2ull * iw[3];
  n += static_cast<std::uint64_t>(iw[3]) * cfg.num_classes + cfg.num_classes;
  return n;
}

}  // namespace slimconv

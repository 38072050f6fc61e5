// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "slimconv/errors.hpp"

namespace slimconv {

inline constexpr std::size_t kNumStages = 4;
inline constexpr std::size_t kExpansion = 4;
inline constexpr std::size_t kBlockKernel = 7;
inline constexpr std::size_t kStemStride = 4;
inline constexpr std::size_t kDownsampleStride = 2;

struct ModelConfig {
  std::array<std::size_t, kNumStages> depths{3, 3, 9, 3};
  std::array<std::size_t, kNumStages> dims{96, 192, 384, 768};
  std::size_t num_classes = 1000;
  double drop_path_rate = 0.1;
  std::size_t input_h = 224;
  std::size_t input_w = 224;
  std::size_t in_channels = 3;
  bool layer_scale = true;
  double layer_scale_init = 1e-6;

  std::size_t num_blocks() const {
    std::size_t n = 0;
    for (auto d : depths) n += d;
    return n;
  }

  /// Channel count C of every block, in execution order.
  std::vector<std::size_t> block_channels() const {
    std::vector<std::size_t> out;
    for (std::size_t s = 0; s < kNumStages; ++s) out.insert(out.end(), depths[s], dims[s]);
    return out;
  }

  void validate() const {
    for (std::size_t s = 0; s < kNumStages; ++s) {
      if (depths[s] == 0) throw ConfigError("depth of stage " + std::to_string(s) + " must be positive");
      if (dims[s] == 0) throw ConfigError("dim of stage " + std::to_string(s) + " must be positive");
    }
    if (num_classes == 0) throw ConfigError("num_classes must be positive");
    if (in_channels == 0) throw ConfigError("in_channels must be positive");
    if (!(drop_path_rate >= 0.0 && drop_path_rate < 1.0))
      throw ConfigError("drop_path_rate must lie in [0, 1)");
    if (input_h == 0 || input_w == 0 || input_h % 32 != 0 || input_w % 32 != 0) {
      throw ConfigError("input size " + std::to_string(input_h) + "x" + std::to_string(input_w) +
                        " must be divisible by 32");
    }
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Named variants: T, S, B at 224x224 with 1000 classes, and a desk-scale
/// "toy" model (1,1,2,1)/(16,32,64,128) at 32x32 with 10 classes.
inline ModelConfig model_preset(std::string_view name) {
  ModelConfig c;
  if (name == "T") {
    c.depths = {3, 3, 9, 3};
    c.dims = {96, 192, 384, 768};
  } else if (name == "S") {
    c.depths = {3, 3, 27, 3};
    c.dims = {96, 192, 384, 768};
    c.drop_path_rate = 0.4;
  } else if (name == "B") {
    c.depths = {3, 3, 27, 3};
    c.dims = {128, 256, 512, 1024};
    c.drop_path_rate = 0.5;
  } else if (name == "toy") {
    c.depths = {1, 1, 2, 1};
    c.dims = {16, 32, 64, 128};
    c.num_classes = 10;
    c.input_h = c.input_w = 32;
    c.drop_path_rate = 0.1;
  } else {
    throw ConfigError("unknown model preset '" + std::string(name) + "' (expected T, S, B or toy)");
  }
  return c;
}

/// Static description of one block.
struct BlockSpec {
  std::size_t stage = 0;
  std::size_t index = 0;  // within the stage
  std::size_t channels = 0;
  std::size_t expansion = kExpansion;
  std::size_t kernel = kBlockKernel;
  double drop_prob = 0.0;
};

/// Blocks in execution order. Drop-path probability ramps linearly from 0
/// at the first block to drop_path_rate at the last.
inline std::vector<BlockSpec> block_specs(const ModelConfig& cfg) {
  std::vector<BlockSpec> out;
  const std::size_t n = cfg.num_blocks();
  std::size_t global = 0;
  for (std::size_t s = 0; s < kNumStages; ++s) {
    for (std::size_t b = 0; b < cfg.depths[s]; ++b, ++global) {
      BlockSpec spec;
      spec.stage = s;
      spec.index = b;
      spec.channels = cfg.dims[s];
      spec.drop_prob = n > 1 ? cfg.drop_path_rate * static_cast<double>(global) /
                                   static_cast<double>(n - 1)
                             : 0.0;
      out.push_back(spec);
    }
  }
  return out;
}

}  // namespace slimconv

/* Copyright 2026 The CBT Runtime Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cbt/error.hpp"
#include "cbt/masked_exec.hpp"
#include "cbt/policy.hpp"
#include "cbt/tensor.hpp"
#include "json.hpp"

namespace cbt {

struct ModelConfig {
  std::size_t num_classes = 4;
  std::size_t num_exits = 3;
  std::size_t trunk_width = 8;
  std::size_t blocks_per_stage = 2;
  std::size_t kernel_size = 3;
  std::size_t input_channels = 3;

  void validate() const {
    if (num_exits < 2) throw ConfigError("num_exits must be >= 2");
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
    if (num_classes > 254) {
      throw ConfigError("num_classes must be <= 254 (u8 labels, 255 = ignore)");
    }
    if (trunk_width == 0 || blocks_per_stage == 0 || input_channels == 0) {
      throw ConfigError("trunk_width, blocks_per_stage and input_channels "
                        "must be positive");
    }
    if (kernel_size % 2 == 0) throw ConfigError("kernel_size must be odd");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return nlohmann::json{{"num_classes", c.num_classes},
                        {"num_exits", c.num_exits},
                        {"trunk_width", c.trunk_width},
                        {"blocks_per_stage", c.blocks_per_stage},
                        {"kernel_size", c.kernel_size},
                        {"input_channels", c.input_channels}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.num_classes = j.at("num_classes").get<std::size_t>();
  c.num_exits = j.at("num_exits").get<std::size_t>();
  c.trunk_width = j.at("trunk_width").get<std::size_t>();
  c.blocks_per_stage = j.at("blocks_per_stage").get<std::size_t>();
  c.kernel_size = j.at("kernel_size").get<std::size_t>();
  c.input_channels = j.at("input_channels").get<std::size_t>();
  return c;
}

// Trunk of N stages, each a run of conv+relu blocks at constant width, with a
// 1x1 conv exit head after every stage.
struct MultiExitNet {
  ModelConfig config;
  std::vector<std::vector<ConvParams>> stages;  // [stage][block]
  std::vector<ConvParams> exits;                // [exit]

  void validate() const {
    config.validate();
    if (stages.size() != config.num_exits || exits.size() != config.num_exits) {
      throw ConfigError("net has " + std::to_string(stages.size()) +
                        " stages and " + std::to_string(exits.size()) +
                        " exits, config says " +
                        std::to_string(config.num_exits));
    }
    for (std::size_t s = 0; s < stages.size(); ++s) {
      if (stages[s].size() != config.blocks_per_stage) {
        throw ConfigError("stage " + std::to_string(s + 1) + " has " +
                          std::to_string(stages[s].size()) + " blocks");
      }
      for (std::size_t b = 0; b < stages[s].size(); ++b) {
        const auto& p = stages[s][b];
        p.validate();
        const std::size_t in =
            (s == 0 && b == 0) ? config.input_channels : config.trunk_width;
        if (p.in_channels != in || p.out_channels != config.trunk_width ||
            p.kernel != config.kernel_size) {
          throw ConfigError("stage" + std::to_string(s + 1) + ".block" +
                            std::to_string(b + 1) + " shape mismatch");
        }
      }
    }
    for (std::size_t n = 0; n < exits.size(); ++n) {
      const auto& p = exits[n];
      p.validate();
      if (p.in_channels != config.trunk_width ||
          p.out_channels != config.num_classes || p.kernel != 1) {
        throw ConfigError("exit" + std::to_string(n + 1) + " shape mismatch");
      }
    }
  }

  friend bool operator==(const MultiExitNet&, const MultiExitNet&) = default;
};

// FLOPs of one unmasked pass over an H x W image, from the layer shapes.
inline std::uint64_t dense_flops(const MultiExitNet& net, std::size_t height,
                                 std::size_t width) {
  std::uint64_t per_pos = 0;
  for (const auto& stage : net.stages) {
    for (const auto& block : stage) per_pos += cost_per_position(block);
  }
  for (const auto& head : net.exits) per_pos += cost_per_position(head);
  return per_pos * height * width;
}

inline void check_image(const MultiExitNet& net, const Tensor& image) {
  if (image.channels() != net.config.input_channels) {
    throw ConfigError("image has " + std::to_string(image.channels()) +
                      " channels, model expects " +
                      std::to_string(net.config.input_channels));
  }
  if (image.height() == 0 || image.width() == 0) {
    throw ConfigError("image has an empty plane");
  }
}

// Exit-head logits of an unmasked pass, one K x H x W tensor per exit.
inline std::vector<Tensor> dense_exit_logits(const MultiExitNet& net,
                                             const Tensor& image) {
  check_image(net, image);
  std::vector<Tensor> logits;
  logits.reserve(net.exits.size());
  Tensor features = image;
  for (std::size_t s = 0; s < net.stages.size(); ++s) {
    for (const auto& block : net.stages[s]) {
      features = relu(conv2d(features, block));
    }
    logits.push_back(conv2d(features, net.exits[s]));
  }
  return logits;
}

inline std::vector<Tensor> forward_dense(const MultiExitNet& net,
                                         const Tensor& image) {
  auto logits = dense_exit_logits(net, image);
  for (auto& l : logits) l = softmax_channels(l);
  return logits;
}

// Frozen positions keep the previous layer's output, which requires the
// trunk width to stay constant.
inline const Tensor& carry_for_stage(const Tensor& previous_output) {
  return previous_output;
}

struct AdaptiveOptions {
  FrozenReads frozen_reads = FrozenReads::kCarry;
};

struct AdaptiveResult {
  std::vector<Tensor> per_exit_probs;
  std::vector<PixelMask> per_exit_masks;  // mask after each exit's update
  PredictionCanvas canvas;
  FlopsLedger ledger;
};

// Runs the net with early finalization. Stage 1 and exit 1 are dense; each
// later layer is evaluated only at pixels still active after the previous
// exit. Exit heads at frozen pixels carry the previous exit's logits, so a
// frozen pixel's probability vector (and argmax) stays what it was when it
// was finalized. The last exit finalizes every remaining pixel.
inline AdaptiveResult forward_adaptive(const MultiExitNet& net,
                                       const Tensor& image,
                                       const ExitPolicy& policy,
                                       AdaptiveOptions options = {}) {
  check_image(net, image);
  validate_policy(policy, net.config.num_classes);
  const std::size_t h = image.height();
  const std::size_t w = image.width();
  const std::size_t num_exits = net.exits.size();

  AdaptiveResult r;
  r.canvas = PredictionCanvas(h, w);
  PixelMask mask = PixelMask::all_active(h, w);
  Tensor features = image;
  Tensor logits;
  std::size_t layer = 0;

  for (std::size_t s = 0; s < num_exits; ++s) {
    for (const auto& block : net.stages[s]) {
      if (s == 0) {
        features = relu(conv2d(features, block));
        r.ledger.record(layer++, h * w * cost_per_position(block));
      } else {
        auto out = masked_conv2d(features, block, mask,
                                 carry_for_stage(features),
                                 options.frozen_reads);
        features = relu(std::move(out.output));
        r.ledger.record(layer++, out.flops);
      }
    }
    const auto& head = net.exits[s];
    if (s == 0) {
      logits = conv2d(features, head);
      r.ledger.record(layer++, h * w * cost_per_position(head), true);
    } else {
      auto out =
          masked_conv2d(features, head, mask, logits, options.frozen_reads);
      logits = std::move(out.output);
      r.ledger.record(layer++, out.flops, true);
    }
    Tensor probs = softmax_channels(logits);

    if (s + 1 < num_exits) {
      mask = update_mask(mask, probs, policy, r.canvas, s + 1);
    } else {
      const auto maps = argmax_channels(probs);
      for (std::size_t pos = 0; pos < mask.size(); ++pos) {
        if (mask.active(pos)) r.canvas.finalize(pos, maps.classes[pos], s + 1);
      }
      mask = PixelMask::intersect(mask,
                                  std::vector<std::uint8_t>(mask.size(), 0));
    }
    r.per_exit_masks.push_back(mask);
    r.per_exit_probs.push_back(std::move(probs));
  }
  return r;
}

// splitmix64 stream; weights are drawn uniformly from [-0.1, 0.1].
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform double in [0, 1).
  double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  float uniform(float lo, float hi) {
    return static_cast<float>(lo + (static_cast<double>(hi) - lo) * unit());
  }

 private:
  std::uint64_t state_;
};

inline MultiExitNet build_fixture_model(std::uint64_t seed,
                                        const ModelConfig& config) {
  config.validate();
  SplitMix64 rng(seed);
  auto fill = [&rng](ConvParams& p) {
    for (float& v : p.weights) v = rng.uniform(-0.1f, 0.1f);
    for (float& v : p.bias) v = rng.uniform(-0.1f, 0.1f);
  };
  MultiExitNet net;
  net.config = config;
  net.stages.resize(config.num_exits);
  for (std::size_t s = 0; s < config.num_exits; ++s) {
    for (std::size_t b = 0; b < config.blocks_per_stage; ++b) {
      const std::size_t in =
          (s == 0 && b == 0) ? config.input_channels : config.trunk_width;
      ConvParams p(config.trunk_width, in, config.kernel_size);
      fill(p);
      net.stages[s].push_back(std::move(p));
    }
  }
  for (std::size_t n = 0; n < config.num_exits; ++n) {
    ConvParams p(config.num_classes, config.trunk_width, 1);
    fill(p);
    net.exits.push_back(std::move(p));
  }
  return net;
}

// Affine map from a pixel's RGB value to one exit's K logits.
struct ExitAffine {
  std::vector<float> weights;  // K x 3, row-major
  std::vector<float> bias;     // K
};

// Net of identity 1x1 trunk blocks (RGB in, RGB out) whose exit n computes
// table[n] applied to the pixel's own input colour. Confidences can then be
// worked out by hand from the image.
inline MultiExitNet build_oracle_model(std::size_t num_classes,
                                       const std::vector<ExitAffine>& table,
                                       std::size_t blocks_per_stage = 1) {
  ModelConfig config;
  config.num_classes = num_classes;
  config.num_exits = table.size();
  config.trunk_width = 3;
  config.blocks_per_stage = blocks_per_stage;
  config.kernel_size = 1;
  config.input_channels = 3;
  config.validate();

  MultiExitNet net;
  net.config = config;
  net.stages.resize(config.num_exits);
  for (auto& stage : net.stages) {
    for (std::size_t b = 0; b < blocks_per_stage; ++b) {
      ConvParams p(3, 3, 1);
      for (std::size_t c = 0; c < 3; ++c) p.weight(c, c, 0, 0) = 1.0f;
      stage.push_back(std::move(p));
    }
  }
  for (const auto& affine : table) {
    if (affine.weights.size() != num_classes * 3 ||
        affine.bias.size() != num_classes) {
      throw ConfigError("oracle table entry must be K x 3 weights + K bias");
    }
    ConvParams p(num_classes, 3, 1);
    p.weights = affine.weights;
    p.bias = affine.bias;
    net.exits.push_back(std::move(p));
  }
  net.validate();
  return net;
}

// Class colours used by the synthetic dataset: vertices of the RGB cube,
// class 0 (background) is black.
inline std::array<std::uint8_t, 3> palette_color(std::size_t cls) {
  static constexpr std::array<std::array<std::uint8_t, 3>, 8> kPalette{{
      {0, 0, 0},
      {1, 0, 0},
      {0, 1, 0},
      {0, 0, 1},
      {1, 1, 0},
      {1, 0, 1},
      {0, 1, 1},
      {1, 1, 1},
  }};
  return kPalette.at(cls);
}

inline constexpr std::size_t kPaletteSize = 8;

// Oracle table over the palette: at exit n, class j scores
//   gains[n][j] * (1 - hamming(palette(j), x))
// on a binary colour x, i.e. gains[n][k] for the pixel's own class k and a
// value <= 0 for every other class. Linear in x, so it is a valid 1x1 conv.
inline std::vector<ExitAffine> palette_oracle_table(
    const std::vector<std::vector<float>>& gains) {
  std::vector<ExitAffine> table;
  for (const auto& row : gains) {
    const std::size_t k = row.size();
    if (k > kPaletteSize) {
      throw ConfigError("palette oracle supports at most 8 classes");
    }
    ExitAffine a{std::vector<float>(k * 3), std::vector<float>(k)};
    for (std::size_t j = 0; j < k; ++j) {
      const auto c = palette_color(j);
      const float ones = static_cast<float>(c[0] + c[1] + c[2]);
      for (std::size_t ch = 0; ch < 3; ++ch) {
        a.weights[j * 3 + ch] = row[j] * (2.0f * c[ch] - 1.0f);
      }
      a.bias[j] = row[j] * (1.0f - ones);
    }
    table.push_back(std::move(a));
  }
  return table;
}

// Gains of the default oracle model for K classes and 3 exits: confidence
// rises with depth, and lower class indices are easier.
inline std::vector<std::vector<float>> default_oracle_gains(
    std::size_t num_classes) {
  std::vector<std::vector<float>> gains(3, std::vector<float>(num_classes));
  for (std::size_t j = 0; j < num_classes; ++j) {
    const float ease = 4.0f * static_cast<float>(num_classes - 1 - j) /
                       static_cast<float>(num_classes > 1 ? num_classes - 1 : 1);
    gains[0][j] = 2.5f + ease;
    gains[1][j] = 5.0f + ease;
    gains[2][j] = 8.0f + ease;
  }
  return gains;
}

// FNV-1a over the bit patterns of a float sequence.
inline std::uint64_t fnv1a64(std::span<const float> values,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  for (float v : values) {
    auto bits = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) {
      h ^= (bits >> (8 * i)) & 0xFFu;
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

inline std::uint64_t weights_checksum(const MultiExitNet& net) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& stage : net.stages) {
    for (const auto& p : stage) {
      h = fnv1a64(p.weights, h);
      h = fnv1a64(p.bias, h);
    }
  }
  for (const auto& p : net.exits) {
    h = fnv1a64(p.weights, h);
    h = fnv1a64(p.bias, h);
  }
  return h;
}

}  // namespace cbt

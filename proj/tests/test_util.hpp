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

// Generators and independent reference implementations shared by the test
// binaries. Nothing here calls into the code paths it is used to check.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "cbt/cbt.hpp"

namespace cbt::testing {

inline Tensor random_tensor(std::mt19937_64& rng, Shape shape, float lo = -1.0f,
                            float hi = 1.0f) {
  std::uniform_real_distribution<float> dist(lo, hi);
  Tensor t(shape);
  for (float& v : t.data()) v = dist(rng);
  return t;
}

inline ConvParams random_conv(std::mt19937_64& rng, std::size_t out,
                              std::size_t in, std::size_t k) {
  std::uniform_real_distribution<float> dist(-0.5f, 0.5f);
  ConvParams p(out, in, k);
  for (float& v : p.weights) v = dist(rng);
  for (float& v : p.bias) v = dist(rng);
  return p;
}

inline PixelMask random_mask(std::mt19937_64& rng, std::size_t h,
                             std::size_t w, double p_active) {
  std::bernoulli_distribution keep(p_active);
  std::vector<std::uint8_t> bits(h * w);
  for (auto& b : bits) b = keep(rng) ? 1 : 0;
  return PixelMask::intersect(PixelMask::all_active(h, w), bits);
}

// Reference convolution: explicit zero-padded copy of the input, then the
// textbook sum. Independent of detail::conv_position.
inline Tensor reference_conv(const Tensor& in, const ConvParams& p) {
  const std::size_t k = p.kernel;
  const std::size_t pad = (k - 1) / 2;
  const std::size_t ph = in.height() + 2 * pad;
  const std::size_t pw = in.width() + 2 * pad;
  std::vector<double> padded(in.channels() * ph * pw, 0.0);
  for (std::size_t c = 0; c < in.channels(); ++c)
    for (std::size_t y = 0; y < in.height(); ++y)
      for (std::size_t x = 0; x < in.width(); ++x)
        padded[(c * ph + y + pad) * pw + x + pad] = in.at(c, y, x);
  Tensor out({p.out_channels, in.height(), in.width()});
  for (std::size_t o = 0; o < p.out_channels; ++o)
    for (std::size_t y = 0; y < in.height(); ++y)
      for (std::size_t x = 0; x < in.width(); ++x) {
        double acc = p.bias[o];
        for (std::size_t i = 0; i < p.in_channels; ++i)
          for (std::size_t dy = 0; dy < k; ++dy)
            for (std::size_t dx = 0; dx < k; ++dx)
              acc += static_cast<double>(
                         p.weights[((o * p.in_channels + i) * k + dy) * k + dx]) *
                     padded[(i * ph + y + dy) * pw + x + dx];
        out.at(o, y, x) = static_cast<float>(acc);
      }
  return out;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a.data()[i]) - b.data()[i]));
  }
  return m;
}

// Closed-form FLOPs of a dense pass, computed from the config alone.
inline std::uint64_t closed_form_dense_flops(const ModelConfig& c,
                                             std::size_t h, std::size_t w) {
  const std::uint64_t k2 = c.kernel_size * c.kernel_size;
  const std::uint64_t first = (2 * k2 * c.input_channels + 1) * c.trunk_width;
  const std::uint64_t body = (2 * k2 * c.trunk_width + 1) * c.trunk_width;
  const std::uint64_t head = (2 * c.trunk_width + 1) * c.num_classes;
  const std::uint64_t blocks = c.num_exits * c.blocks_per_stage;
  return h * w * (first + (blocks - 1) * body + c.num_exits * head);
}

inline std::string temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() /
             ("cbt_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

// Two-class oracle net whose exit-1 logits are (g * red, 0): a pixel with
// red value r has exit-1 confidence sigmoid(g * r) for class 0. Later exits
// repeat the same head with gain `later_gain`.
inline MultiExitNet two_tone_oracle(float g, float later_gain,
                                    std::size_t exits = 2) {
  std::vector<ExitAffine> table;
  for (std::size_t n = 0; n < exits; ++n) {
    const float gain = n == 0 ? g : later_gain;
    table.push_back({{gain, 0.0f, 0.0f, 0.0f, 0.0f, 0.0f}, {0.0f, 0.0f}});
  }
  return build_oracle_model(2, table);
}

}  // namespace cbt::testing

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

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cbt/error.hpp"

namespace cbt {

struct Shape {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t plane() const { return height * width; }
  std::size_t numel() const { return channels * height * width; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
  return "(" + std::to_string(s.channels) + ", " + std::to_string(s.height) +
         ", " + std::to_string(s.width) + ")";
}

// Dense C x H x W array of floats, channel-major then row then column.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, float fill = 0.0f)
      : shape_(shape), data_(shape.numel(), fill) {}

  Tensor(Shape shape, std::vector<float> data)
      : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.numel()) {
      throw ConfigError("tensor data length " + std::to_string(data_.size()) +
                        " does not match shape " + to_string(shape_));
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t channels() const { return shape_.channels; }
  std::size_t height() const { return shape_.height; }
  std::size_t width() const { return shape_.width; }
  std::size_t size() const { return data_.size(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  std::size_t index(std::size_t c, std::size_t y, std::size_t x) const {
    return (c * shape_.height + y) * shape_.width + x;
  }
  float& at(std::size_t c, std::size_t y, std::size_t x) {
    return data_[index(c, y, x)];
  }
  float at(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[index(c, y, x)];
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](float v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<float> data_;
};

// Bitwise comparison; distinguishes -0.0 from 0.0 and compares NaN payloads.
inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  auto da = a.data();
  auto db = b.data();
  return std::equal(da.begin(), da.end(), db.begin(), [](float x, float y) {
    return std::bit_cast<std::uint32_t>(x) == std::bit_cast<std::uint32_t>(y);
  });
}

// Square-kernel convolution, stride 1, "same" zero padding.
struct ConvParams {
  std::size_t out_channels = 0;
  std::size_t in_channels = 0;
  std::size_t kernel = 1;
  std::vector<float> weights;  // out x in x k x k
  std::vector<float> bias;     // out

  ConvParams() = default;
  ConvParams(std::size_t out, std::size_t in, std::size_t k)
      : out_channels(out),
        in_channels(in),
        kernel(k),
        weights(out * in * k * k, 0.0f),
        bias(out, 0.0f) {
    validate();
  }

  void validate() const {
    if (kernel % 2 == 0) {
      throw ConfigError("kernel size must be odd, got " +
                        std::to_string(kernel));
    }
    if (weights.size() != out_channels * in_channels * kernel * kernel) {
      throw ConfigError("conv weight length does not match " +
                        std::to_string(out_channels) + "x" +
                        std::to_string(in_channels) + "x" +
                        std::to_string(kernel) + "x" + std::to_string(kernel));
    }
    if (bias.size() != out_channels) {
      throw ConfigError("conv bias length " + std::to_string(bias.size()) +
                        " != out_channels " + std::to_string(out_channels));
    }
  }

  float& weight(std::size_t o, std::size_t i, std::size_t dy, std::size_t dx) {
    return weights[((o * in_channels + i) * kernel + dy) * kernel + dx];
  }
  float weight(std::size_t o, std::size_t i, std::size_t dy,
               std::size_t dx) const {
    return weights[((o * in_channels + i) * kernel + dy) * kernel + dx];
  }

  friend bool operator==(const ConvParams&, const ConvParams&) = default;
};

namespace detail {

// Computes every output channel at (y, x) into out[o * plane + y * W + x].
// `zeroed` (if non-empty) marks input positions read as zero regardless of
// their stored value. Shared by the dense and the masked path so the two
// agree bitwise.
inline void conv_position(const Tensor& input, const ConvParams& p,
                          std::size_t y, std::size_t x, Tensor& out,
                          std::span<const std::uint8_t> zeroed = {}) {
  const auto h = static_cast<std::ptrdiff_t>(input.height());
  const auto w = static_cast<std::ptrdiff_t>(input.width());
  const auto half = static_cast<std::ptrdiff_t>(p.kernel / 2);
  const auto k = p.kernel;
  auto in = input.data();
  for (std::size_t o = 0; o < p.out_channels; ++o) {
    double acc = 0.0;
    for (std::size_t i = 0; i < p.in_channels; ++i) {
      for (std::size_t dy = 0; dy < k; ++dy) {
        const auto yy = static_cast<std::ptrdiff_t>(y + dy) - half;
        if (yy < 0 || yy >= h) continue;
        for (std::size_t dx = 0; dx < k; ++dx) {
          const auto xx = static_cast<std::ptrdiff_t>(x + dx) - half;
          if (xx < 0 || xx >= w) continue;
          const auto pos = static_cast<std::size_t>(yy * w + xx);
          if (!zeroed.empty() && zeroed[pos]) continue;
          acc += static_cast<double>(p.weight(o, i, dy, dx)) *
                 static_cast<double>(in[i * input.shape().plane() + pos]);
        }
      }
    }
    out.at(o, y, x) =
        static_cast<float>(static_cast<double>(p.bias[o]) + acc);
  }
}

inline void check_conv_input(const Tensor& input, const ConvParams& p) {
  if (input.channels() != p.in_channels) {
    throw ConfigError("conv2d expects " + std::to_string(p.in_channels) +
                      " input channels, got " +
                      std::to_string(input.channels()));
  }
}

}  // namespace detail

inline Tensor conv2d(const Tensor& input, const ConvParams& params) {
  detail::check_conv_input(input, params);
  Tensor out({params.out_channels, input.height(), input.width()});
  for (std::size_t y = 0; y < input.height(); ++y) {
    for (std::size_t x = 0; x < input.width(); ++x) {
      detail::conv_position(input, params, y, x, out);
    }
  }
  return out;
}

inline Tensor relu(Tensor t) {
  for (float& v : t.data()) v = v > 0.0f ? v : 0.0f;
  return t;
}

// Per-pixel softmax over the channel axis with max subtraction.
inline Tensor softmax_channels(const Tensor& logits) {
  const std::size_t k = logits.channels();
  if (k < 2) {
    throw ConfigError("softmax_channels needs at least 2 channels");
  }
  Tensor out(logits.shape());
  const std::size_t plane = logits.shape().plane();
  auto in = logits.data();
  auto dst = out.data();
  std::vector<double> e(k);
  for (std::size_t p = 0; p < plane; ++p) {
    float m = in[p];
    for (std::size_t c = 1; c < k; ++c) m = std::max(m, in[c * plane + p]);
    double sum = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      e[c] = std::exp(static_cast<double>(in[c * plane + p]) - m);
      sum += e[c];
    }
    for (std::size_t c = 0; c < k; ++c) {
      dst[c * plane + p] = static_cast<float>(e[c] / sum);
    }
  }
  return out;
}

struct ArgmaxMaps {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint16_t> classes;  // H x W
  std::vector<float> confidence;       // H x W
};

// Ties resolve to the lowest class index.
inline ArgmaxMaps argmax_channels(const Tensor& probs) {
  const std::size_t plane = probs.shape().plane();
  ArgmaxMaps maps{probs.height(), probs.width(),
                  std::vector<std::uint16_t>(plane, 0),
                  std::vector<float>(plane, 0.0f)};
  if (probs.channels() == 0) return maps;
  auto in = probs.data();
  for (std::size_t p = 0; p < plane; ++p) {
    std::size_t best = 0;
    float best_v = in[p];
    for (std::size_t c = 1; c < probs.channels(); ++c) {
      if (in[c * plane + p] > best_v) {
        best_v = in[c * plane + p];
        best = c;
      }
    }
    maps.classes[p] = static_cast<std::uint16_t>(best);
    maps.confidence[p] = best_v;
  }
  return maps;
}

// Channel vector of one pixel, copied out of a C x H x W tensor.
inline std::vector<float> pixel_vector(const Tensor& t, std::size_t pos) {
  std::vector<float> v(t.channels());
  const std::size_t plane = t.shape().plane();
  for (std::size_t c = 0; c < t.channels(); ++c) v[c] = t.data()[c * plane + pos];
  return v;
}

}  // namespace cbt

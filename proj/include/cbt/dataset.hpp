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

// EESD labelled image sets, little-endian:
//   "EESD" | u32 version=1 | u32 image count | u32 K | u32 H | u32 W |
//   per image: RGB u8[3*H*W] (channel-major), labels u8[H*W] (255 = ignore).

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cbt/binary_io.hpp"
#include "cbt/error.hpp"
#include "cbt/model.hpp"
#include "cbt/tensor.hpp"

namespace cbt {

inline constexpr char kEesdMagic[4] = {'E', 'E', 'S', 'D'};
inline constexpr std::uint32_t kEesdVersion = 1;
inline constexpr std::uint8_t kIgnoreLabel = 255;

struct LabeledImage {
  Tensor image;                      // 3 x H x W, values in [0, 1]
  std::vector<std::uint8_t> labels;  // H x W
};

class Dataset {
 public:
  Dataset() = default;
  Dataset(std::size_t num_classes, std::size_t height, std::size_t width)
      : num_classes_(num_classes), height_(height), width_(width) {}

  void add(std::vector<std::uint8_t> rgb, std::vector<std::uint8_t> labels) {
    if (rgb.size() != 3 * plane() || labels.size() != plane()) {
      throw ConfigError("image payload does not match " +
                        std::to_string(height_) + "x" + std::to_string(width_));
    }
    rgb_.push_back(std::move(rgb));
    labels_.push_back(std::move(labels));
  }

  std::size_t size() const { return rgb_.size(); }
  bool empty() const { return rgb_.empty(); }
  std::size_t num_classes() const { return num_classes_; }
  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t plane() const { return height_ * width_; }

  std::span<const std::uint8_t> rgb(std::size_t i) const { return rgb_[i]; }
  std::span<const std::uint8_t> labels(std::size_t i) const {
    return labels_[i];
  }

  // RGB scaled to [0, 1] by 1/255.
  Tensor image(std::size_t i) const {
    std::vector<float> data(rgb_[i].size());
    std::transform(rgb_[i].begin(), rgb_[i].end(), data.begin(),
                   [](std::uint8_t v) { return static_cast<float>(v) / 255.0f; });
    return Tensor({3, height_, width_}, std::move(data));
  }

  LabeledImage at(std::size_t i) const {
    return {image(i), labels_[i]};
  }

  // Every label must be a class id or `ignore_label`.
  void validate_labels(std::uint8_t ignore_label = kIgnoreLabel) const {
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      for (std::uint8_t l : labels_[i]) {
        if (l != ignore_label && l >= num_classes_) {
          throw DataError("image " + std::to_string(i) + " has label " +
                          std::to_string(l) + " outside 0.." +
                          std::to_string(num_classes_ - 1));
        }
      }
    }
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;

 private:
  std::size_t num_classes_ = 0;
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<std::vector<std::uint8_t>> rgb_;
  std::vector<std::vector<std::uint8_t>> labels_;
};

inline Bytes save_dataset(const Dataset& ds) {
  ByteWriter w;
  w.put_string(std::string_view(kEesdMagic, 4));
  w.put<std::uint32_t>(kEesdVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.size()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.num_classes()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.height()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.width()));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    w.put_bytes(ds.rgb(i));
    w.put_bytes(ds.labels(i));
  }
  return w.take();
}

inline Dataset load_dataset(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "EESD");
  const auto magic = r.get_string(4, "magic");
  if (magic != std::string_view(kEesdMagic, 4)) {
    throw FormatError("EESD: bad magic \"" + magic + "\"");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kEesdVersion) {
    throw FormatError("EESD: unsupported version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>("image count");
  const auto k = r.get<std::uint32_t>("K");
  const auto h = r.get<std::uint32_t>("H");
  const auto w = r.get<std::uint32_t>("W");
  if (k < 2 || k > 254) {
    throw FormatError("EESD: K = " + std::to_string(k) + " out of range");
  }
  if (h == 0 || w == 0) throw FormatError("EESD: empty image plane");
  Dataset ds(k, h, w);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto tag = "image " + std::to_string(i);
    auto rgb = r.get_bytes(3 * plane, tag + " rgb");
    auto labels = r.get_bytes(plane, tag + " labels");
    ds.add({rgb.begin(), rgb.end()}, {labels.begin(), labels.end()});
  }
  if (r.remaining() != 0) {
    throw FormatError("EESD: " + std::to_string(r.remaining()) +
                      " trailing bytes");
  }
  return ds;
}

struct SyntheticSpec {
  std::size_t num_images = 16;
  std::size_t num_classes = 4;
  std::size_t height = 32;
  std::size_t width = 32;
  std::uint64_t seed = 0;
  int noise = 6;  // max absolute per-channel jitter, in u8 levels
};

// Shapes on a black background, each class drawn in its palette colour.
// Class 1 gets large rectangles, middle classes discs, the last class thin
// lines, so class areas (and difficulty) differ. Image i always contains
// class 1 + (i mod (K-1)); a few pixels per image are labelled ignore.
inline Dataset generate_synthetic_dataset(const SyntheticSpec& spec) {
  if (spec.num_classes < 2 || spec.num_classes > kPaletteSize) {
    throw ConfigError("synthetic dataset supports 2..8 classes");
  }
  if (spec.height < 8 || spec.width < 8) {
    throw ConfigError("synthetic images must be at least 8x8");
  }
  SplitMix64 rng(spec.seed ^ 0x5EED5EED5EED5EEDull);
  auto below = [&rng](std::size_t n) {
    return static_cast<std::size_t>(rng.next() % n);
  };
  const std::size_t h = spec.height;
  const std::size_t w = spec.width;
  const std::size_t k = spec.num_classes;
  Dataset ds(k, h, w);

  auto draw = [&](std::vector<std::uint8_t>& labels, std::size_t cls) {
    if (cls == 1) {
      const std::size_t rh = h / 4 + below(h / 3);
      const std::size_t rw = w / 4 + below(w / 3);
      const std::size_t y0 = below(h - rh);
      const std::size_t x0 = below(w - rw);
      for (std::size_t y = y0; y < y0 + rh; ++y)
        for (std::size_t x = x0; x < x0 + rw; ++x) labels[y * w + x] = 1;
    } else if (cls + 1 == k && k > 2) {
      const bool horizontal = below(2) == 0;
      const std::size_t at = 1 + below((horizontal ? h : w) - 2);
      const std::size_t len = (horizontal ? w : h) / 2 + below((horizontal ? w : h) / 2);
      const std::size_t start = below((horizontal ? w : h) - len + 1);
      for (std::size_t t = start; t < start + len; ++t) {
        labels[horizontal ? at * w + t : t * w + at] = static_cast<std::uint8_t>(cls);
      }
    } else {
      const auto r = static_cast<std::ptrdiff_t>(2 + below(std::min(h, w) / 6 + 1));
      const auto cy = static_cast<std::ptrdiff_t>(below(h));
      const auto cx = static_cast<std::ptrdiff_t>(below(w));
      for (std::ptrdiff_t y = cy - r; y <= cy + r; ++y) {
        for (std::ptrdiff_t x = cx - r; x <= cx + r; ++x) {
          if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(h) ||
              x >= static_cast<std::ptrdiff_t>(w))
            continue;
          if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r) {
            labels[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)] =
                static_cast<std::uint8_t>(cls);
          }
        }
      }
    }
  };

  for (std::size_t i = 0; i < spec.num_images; ++i) {
    std::vector<std::uint8_t> labels(h * w, 0);
    draw(labels, 1 + i % (k - 1));
    const std::size_t extra = below(3);
    for (std::size_t e = 0; e < extra; ++e) draw(labels, 1 + below(k - 1));

    std::vector<std::uint8_t> rgb(3 * h * w);
    for (std::size_t p = 0; p < h * w; ++p) {
      const auto color = palette_color(labels[p]);
      for (std::size_t c = 0; c < 3; ++c) {
        const int base = color[c] ? 255 : 0;
        const int jitter =
            static_cast<int>(below(2 * static_cast<std::size_t>(spec.noise) + 1)) -
            spec.noise;
        rgb[c * h * w + p] =
            static_cast<std::uint8_t>(std::clamp(base + jitter, 0, 255));
      }
    }
    // Unlabelled speck.
    const std::size_t sy = below(h - 1);
    const std::size_t sx = below(w - 1);
    for (std::size_t y = sy; y < sy + 2; ++y)
      for (std::size_t x = sx; x < sx + 2; ++x) labels[y * w + x] = kIgnoreLabel;

    ds.add(std::move(rgb), std::move(labels));
  }
  return ds;
}

}  // namespace cbt

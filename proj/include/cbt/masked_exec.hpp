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
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cbt/error.hpp"
#include "cbt/tensor.hpp"

namespace cbt {

// H x W activity map. A position starts active (1) and, once finalized (0),
// can never become active again: there is no way to set a bit back to 1.
class PixelMask {
 public:
  PixelMask() = default;

  static PixelMask all_active(std::size_t height, std::size_t width) {
    PixelMask m;
    m.height_ = height;
    m.width_ = width;
    m.bits_.assign(height * width, 1);
    m.active_ = height * width;
    return m;
  }

  // Intersection of `base` with an arbitrary keep-map. Used by tests and by
  // the policy update; the result is always a subset of `base`.
  static PixelMask intersect(const PixelMask& base,
                             std::span<const std::uint8_t> keep) {
    if (keep.size() != base.bits_.size()) {
      throw ConfigError("mask intersection size mismatch");
    }
    PixelMask m = base;
    m.active_ = 0;
    for (std::size_t i = 0; i < m.bits_.size(); ++i) {
      m.bits_[i] = (base.bits_[i] && keep[i]) ? 1 : 0;
      m.active_ += m.bits_[i];
    }
    return m;
  }

  void deactivate(std::size_t pos) {
    if (bits_[pos]) {
      bits_[pos] = 0;
      --active_;
    }
  }

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return bits_.size(); }
  std::size_t active_count() const { return active_; }
  bool active(std::size_t pos) const { return bits_[pos] != 0; }
  bool active(std::size_t y, std::size_t x) const {
    return bits_[y * width_ + x] != 0;
  }
  std::span<const std::uint8_t> bits() const { return bits_; }

  // True if every active position of *this is also active in `other`.
  bool subset_of(const PixelMask& other) const {
    if (other.bits_.size() != bits_.size()) return false;
    for (std::size_t i = 0; i < bits_.size(); ++i) {
      if (bits_[i] && !other.bits_[i]) return false;
    }
    return true;
  }

  friend bool operator==(const PixelMask&, const PixelMask&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<std::uint8_t> bits_;
  std::size_t active_ = 0;
};

// FLOPs per output position: 2 per multiply-accumulate, 1 per bias add.
constexpr std::uint64_t cost_per_position(std::size_t kernel,
                                          std::size_t in_channels,
                                          std::size_t out_channels) {
  return (2ull * kernel * kernel * in_channels + 1ull) * out_channels;
}

inline std::uint64_t cost_per_position(const ConvParams& p) {
  return cost_per_position(p.kernel, p.in_channels, p.out_channels);
}

// How masked_conv2d reads neighbours that are inactive in the mask.
enum class FrozenReads {
  kCarry,  // read the stored (frozen) feature values
  kZero,   // treat them as zero padding (experiment only)
};

struct MaskedConvResult {
  Tensor output;
  std::uint64_t flops = 0;
};

// Convolution evaluated only at active output positions; inactive positions
// copy `carry`. FLOPs are charged per active position only.
inline MaskedConvResult masked_conv2d(const Tensor& input,
                                      const ConvParams& params,
                                      const PixelMask& mask, const Tensor& carry,
                                      FrozenReads reads = FrozenReads::kCarry) {
  detail::check_conv_input(input, params);
  const Shape out_shape{params.out_channels, input.height(), input.width()};
  if (carry.shape() != out_shape) {
    throw ConfigError("carry shape " + to_string(carry.shape()) +
                      " does not match conv output " + to_string(out_shape));
  }
  if (mask.height() != input.height() || mask.width() != input.width()) {
    throw ConfigError("mask is " + std::to_string(mask.height()) + "x" +
                      std::to_string(mask.width()) + ", input plane is " +
                      std::to_string(input.height()) + "x" +
                      std::to_string(input.width()));
  }

  std::vector<std::uint8_t> zeroed;
  if (reads == FrozenReads::kZero) {
    zeroed.resize(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) zeroed[i] = !mask.active(i);
  }

  MaskedConvResult r{carry, 0};
  for (std::size_t y = 0; y < input.height(); ++y) {
    for (std::size_t x = 0; x < input.width(); ++x) {
      if (!mask.active(y, x)) continue;
      detail::conv_position(input, params, y, x, r.output, zeroed);
    }
  }
  r.flops = mask.active_count() * cost_per_position(params);
  return r;
}

// Ordered record of per-layer FLOPs for one inference pass, with running
// totals captured at every exit boundary.
class FlopsLedger {
 public:
  struct Entry {
    std::size_t stage = 0;
    std::uint64_t flops = 0;
    friend bool operator==(const Entry&, const Entry&) = default;
  };

  // Stage ids must be strictly increasing across calls.
  void record(std::size_t stage, std::uint64_t flops,
              bool exit_boundary = false) {
    if (!entries_.empty() && stage <= entries_.back().stage) {
      throw UsageError("ledger stage " + std::to_string(stage) +
                       " recorded after stage " +
                       std::to_string(entries_.back().stage));
    }
    entries_.push_back({stage, flops});
    total_ += flops;
    if (exit_boundary) exit_totals_.push_back(total_);
  }

  // Closes an exit at the current running total.
  void mark_exit() { exit_totals_.push_back(total_); }

  const std::vector<Entry>& entries() const { return entries_; }
  const std::vector<std::uint64_t>& exit_totals() const { return exit_totals_; }
  std::uint64_t total() const { return total_; }

  friend bool operator==(const FlopsLedger&, const FlopsLedger&) = default;

 private:
  std::vector<Entry> entries_;
  std::vector<std::uint64_t> exit_totals_;
  std::uint64_t total_ = 0;
};

}  // namespace cbt

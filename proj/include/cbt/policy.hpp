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

#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "cbt/error.hpp"
#include "cbt/masked_exec.hpp"
#include "cbt/tensor.hpp"
#include "cbt/thresholds.hpp"

namespace cbt {

// Never finalize before the last exit.
struct DensePolicy {};

// One threshold for every class.
struct UniformPolicy {
  double threshold = 0.998;
};

// One threshold per class.
struct PerClassPolicy {
  ThresholdVector thresholds;
};

using ExitPolicy = std::variant<DensePolicy, UniformPolicy, PerClassPolicy>;

inline void validate_policy(const ExitPolicy& policy, std::size_t num_classes) {
  if (const auto* u = std::get_if<UniformPolicy>(&policy)) {
    if (!(u->threshold > 0.0 && u->threshold <= 1.0)) {
      throw ConfigError("uniform threshold must be in (0, 1], got " +
                        std::to_string(u->threshold));
    }
  } else if (const auto* pc = std::get_if<PerClassPolicy>(&policy)) {
    check_num_classes(pc->thresholds, num_classes);
  }
}

inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

// Short human-readable tag, e.g. "dense", "uniform:0.998", "cbt[0.9,0.998]".
inline std::string describe(const ExitPolicy& policy) {
  if (std::holds_alternative<DensePolicy>(policy)) return "dense";
  if (const auto* u = std::get_if<UniformPolicy>(&policy)) {
    return "uniform:" + format_real(u->threshold);
  }
  const auto& t = std::get<PerClassPolicy>(policy).thresholds;
  return "cbt[" + format_real(t.alpha) + "," + format_real(t.beta) + "]";
}

// Returns the argmax class if the pixel is confident enough to finalize.
// The comparison is strict: a probability equal to its threshold stays
// active.
inline std::optional<std::size_t> should_finalize(std::span<const float> pi,
                                                  const ExitPolicy& policy) {
  if (pi.empty() || std::holds_alternative<DensePolicy>(policy)) {
    return std::nullopt;
  }
  std::size_t j = 0;
  for (std::size_t c = 1; c < pi.size(); ++c) {
    if (pi[c] > pi[j]) j = c;
  }
  const double p = pi[j];
  const double t = std::holds_alternative<UniformPolicy>(policy)
                       ? std::get<UniformPolicy>(policy).threshold
                       : std::get<PerClassPolicy>(policy).thresholds[j];
  if (p > t) return j;
  return std::nullopt;
}

// Returns t when every present-class threshold equals t.
inline std::optional<double> equivalent_uniform(const ThresholdVector& t) {
  std::optional<double> value;
  for (std::size_t k = 0; k < t.num_classes(); ++k) {
    if (t.is_absent(k)) continue;
    if (!value) {
      value = t.thresholds[k];
    } else if (*value != t.thresholds[k]) {
      return std::nullopt;
    }
  }
  return value;
}

// Per-pixel finalized labels. Entries are write-once.
class PredictionCanvas {
 public:
  PredictionCanvas() = default;
  PredictionCanvas(std::size_t height, std::size_t width)
      : height_(height),
        width_(width),
        class_map_(height * width, 0),
        exit_map_(height * width, 0),
        finalized_(height * width, 0) {}

  // exit_index is 1-based.
  void finalize(std::size_t pos, std::size_t cls, std::size_t exit_index) {
    if (finalized_[pos]) {
      throw UsageError("pixel " + std::to_string(pos) +
                       " finalized twice (exit " + std::to_string(exit_index) +
                       ")");
    }
    class_map_[pos] = static_cast<std::uint16_t>(cls);
    exit_map_[pos] = static_cast<std::uint16_t>(exit_index);
    finalized_[pos] = 1;
    ++count_;
  }

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return finalized_.size(); }
  std::size_t finalized_count() const { return count_; }
  bool finalized(std::size_t pos) const { return finalized_[pos] != 0; }
  std::uint16_t class_at(std::size_t pos) const { return class_map_[pos]; }
  std::uint16_t exit_at(std::size_t pos) const { return exit_map_[pos]; }
  std::span<const std::uint16_t> class_map() const { return class_map_; }
  std::span<const std::uint16_t> exit_map() const { return exit_map_; }

  friend bool operator==(const PredictionCanvas&,
                         const PredictionCanvas&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<std::uint16_t> class_map_;
  std::vector<std::uint16_t> exit_map_;  // 0 = not finalized
  std::vector<std::uint8_t> finalized_;
  std::size_t count_ = 0;
};

// Examines the active pixels of `mask` in row-major order and finalizes the
// ones the policy accepts. Returns the shrunk mask; `canvas` is updated in
// place.
inline PixelMask update_mask(const PixelMask& mask, const Tensor& probs,
                             const ExitPolicy& policy, PredictionCanvas& canvas,
                             std::size_t exit_index) {
  if (probs.height() != mask.height() || probs.width() != mask.width() ||
      canvas.size() != mask.size()) {
    throw ConfigError("update_mask: mask, probabilities and canvas disagree");
  }
  std::vector<std::uint8_t> keep(mask.size(), 1);
  for (std::size_t pos = 0; pos < mask.size(); ++pos) {
    if (!mask.active(pos)) continue;
    const auto pi = pixel_vector(probs, pos);
    if (auto cls = should_finalize(pi, policy)) {
      keep[pos] = 0;
      canvas.finalize(pos, *cls, exit_index);
    }
  }
  return PixelMask::intersect(mask, keep);
}

}  // namespace cbt

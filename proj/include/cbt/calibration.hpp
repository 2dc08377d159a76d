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

// Per-class threshold calibration:
//   1. class means: for every exit n and ground-truth class k, the mean
//      probability vector over all labelled pixels of class k;
//   2. average those vectors over the exits into one K x K matrix P;
//   3. score each class by top1(P[k]) - top2(P[k]);
//   4. inversely rescale the scores onto [alpha, beta] (thresholds.hpp).
// Probabilities come from unmasked forward passes, so none of this depends
// on the thresholds being produced.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "cbt/dataset.hpp"
#include "cbt/error.hpp"
#include "cbt/model.hpp"
#include "cbt/parallel.hpp"
#include "cbt/tensor.hpp"
#include "cbt/thresholds.hpp"
#include "json.hpp"

namespace cbt {

// Running sums of per-exit probability vectors, split by ground-truth class.
class ClassMeanTable {
 public:
  ClassMeanTable() = default;
  ClassMeanTable(std::size_t num_exits, std::size_t num_classes)
      : exits_(num_exits),
        classes_(num_classes),
        sums_(num_exits * num_classes * num_classes, 0.0),
        counts_(num_classes, 0) {}

  std::size_t num_exits() const { return exits_; }
  std::size_t num_classes() const { return classes_; }

  // probs: one K x H x W tensor per exit; labels: H x W.
  void add(std::span<const Tensor> probs, std::span<const std::uint8_t> labels,
           std::optional<std::uint8_t> ignore_label) {
    if (probs.size() != exits_) {
      throw ConfigError("expected " + std::to_string(exits_) +
                        " exit tensors, got " + std::to_string(probs.size()));
    }
    for (const auto& p : probs) {
      if (p.channels() != classes_ || p.shape().plane() != labels.size()) {
        throw ConfigError("probability tensor does not match labels");
      }
    }
    const std::size_t plane = labels.size();
    for (std::size_t pos = 0; pos < plane; ++pos) {
      const std::uint8_t l = labels[pos];
      if (ignore_label && l == *ignore_label) continue;
      if (l >= classes_) {
        throw DataError("label " + std::to_string(l) + " outside 0.." +
                        std::to_string(classes_ - 1));
      }
      ++counts_[l];
      for (std::size_t n = 0; n < exits_; ++n) {
        auto src = probs[n].data();
        double* dst = &sums_[(n * classes_ + l) * classes_];
        for (std::size_t j = 0; j < classes_; ++j) {
          dst[j] += static_cast<double>(src[j * plane + pos]);
        }
      }
    }
  }

  void merge(const ClassMeanTable& other) {
    if (other.exits_ != exits_ || other.classes_ != classes_) {
      throw ConfigError("cannot merge class mean tables of different shape");
    }
    for (std::size_t i = 0; i < sums_.size(); ++i) sums_[i] += other.sums_[i];
    for (std::size_t k = 0; k < classes_; ++k) counts_[k] += other.counts_[k];
  }

  std::uint64_t count(std::size_t k) const { return counts_[k]; }
  bool absent(std::size_t k) const { return counts_[k] == 0; }

  // Mean probability of class j at exit n over pixels of class k. Zero for
  // absent k; check absent() first.
  double mean(std::size_t n, std::size_t k, std::size_t j) const {
    if (counts_[k] == 0) return 0.0;
    return sums_[(n * classes_ + k) * classes_ + j] /
           static_cast<double>(counts_[k]);
  }

  std::vector<double> mean_vector(std::size_t n, std::size_t k) const {
    std::vector<double> v(classes_);
    for (std::size_t j = 0; j < classes_; ++j) v[j] = mean(n, k, j);
    return v;
  }

 private:
  std::size_t exits_ = 0;
  std::size_t classes_ = 0;
  std::vector<double> sums_;  // [exit][class k][class j]
  std::vector<std::uint64_t> counts_;
};

// Accumulates class means with dense forward passes. Each image gets its own
// partial table; partials are merged in image order, so the result is the
// same for every `jobs`.
inline ClassMeanTable accumulate_class_means(
    const MultiExitNet& net, const Dataset& dataset,
    std::optional<std::uint8_t> ignore_label = kIgnoreLabel,
    std::size_t jobs = 1) {
  if (dataset.empty()) throw DataError("calibration dataset is empty");
  if (dataset.num_classes() != net.config.num_classes) {
    throw ConfigError("dataset has " + std::to_string(dataset.num_classes()) +
                      " classes, model has " +
                      std::to_string(net.config.num_classes));
  }
  const std::size_t n_exits = net.config.num_exits;
  const std::size_t k = net.config.num_classes;
  std::vector<ClassMeanTable> partial(dataset.size(),
                                      ClassMeanTable(n_exits, k));
  parallel_for(dataset.size(), jobs, [&](std::size_t i) {
    const auto probs = forward_dense(net, dataset.image(i));
    partial[i].add(probs, dataset.labels(i), ignore_label);
  });
  ClassMeanTable table(n_exits, k);
  for (const auto& p : partial) table.merge(p);
  return table;
}

// P[k] = mean over exits of the class-k mean vectors.
struct ClassConfidenceMatrix {
  std::size_t num_classes = 0;
  std::vector<double> values;  // K x K, row k is P^k
  std::vector<bool> absent;

  double at(std::size_t k, std::size_t j) const {
    return values[k * num_classes + j];
  }
  std::span<const double> row(std::size_t k) const {
    return std::span<const double>(values).subspan(k * num_classes,
                                                   num_classes);
  }
};

inline ClassConfidenceMatrix average_over_layers(const ClassMeanTable& table) {
  const std::size_t k = table.num_classes();
  const std::size_t n_exits = table.num_exits();
  ClassConfidenceMatrix p{k, std::vector<double>(k * k, 0.0),
                          std::vector<bool>(k, false)};
  for (std::size_t c = 0; c < k; ++c) {
    p.absent[c] = table.absent(c);
    if (p.absent[c]) continue;
    for (std::size_t j = 0; j < k; ++j) {
      double s = 0.0;
      for (std::size_t n = 0; n < n_exits; ++n) s += table.mean(n, c, j);
      p.values[c * k + j] = s / static_cast<double>(n_exits);
    }
  }
  return p;
}

inline ConfidenceGaps confidence_gaps(const ClassConfidenceMatrix& p) {
  if (p.num_classes < 2) throw ConfigError("confidence gaps need K >= 2");
  ConfidenceGaps g{std::vector<double>(p.num_classes, 0.0), p.absent};
  for (std::size_t k = 0; k < p.num_classes; ++k) {
    if (p.absent[k]) continue;
    std::vector<double> row(p.row(k).begin(), p.row(k).end());
    std::partial_sort(row.begin(), row.begin() + 2, row.end(),
                      std::greater<>());
    g.values[k] = row[0] - row[1];
  }
  return g;
}

struct CalibrationResult {
  ClassMeanTable means;
  ClassConfidenceMatrix confidence;
  ConfidenceGaps gaps;
  ThresholdVector thresholds;
};

inline CalibrationResult calibrate(const MultiExitNet& net,
                                   const Dataset& dataset, double alpha,
                                   double beta,
                                   std::optional<std::uint8_t> ignore_label =
                                       kIgnoreLabel,
                                   std::size_t jobs = 1) {
  check_alpha_beta(alpha, beta);
  CalibrationResult r;
  r.means = accumulate_class_means(net, dataset, ignore_label, jobs);
  r.confidence = average_over_layers(r.means);
  r.gaps = confidence_gaps(r.confidence);
  r.thresholds = scale_thresholds(r.gaps, alpha, beta);
  return r;
}

// Full class-mean table, P matrix and gaps, for the diagnostics file.
inline nlohmann::json diagnostics_json(const CalibrationResult& r) {
  nlohmann::json means = nlohmann::json::array();
  for (std::size_t n = 0; n < r.means.num_exits(); ++n) {
    nlohmann::json per_exit = nlohmann::json::array();
    for (std::size_t k = 0; k < r.means.num_classes(); ++k) {
      if (r.means.absent(k)) {
        per_exit.push_back(nullptr);
      } else {
        per_exit.push_back(r.means.mean_vector(n, k));
      }
    }
    means.push_back(std::move(per_exit));
  }
  std::vector<std::uint64_t> counts;
  for (std::size_t k = 0; k < r.means.num_classes(); ++k) {
    counts.push_back(r.means.count(k));
  }
  nlohmann::json p = nlohmann::json::array();
  for (std::size_t k = 0; k < r.confidence.num_classes; ++k) {
    if (r.confidence.absent[k]) {
      p.push_back(nullptr);
    } else {
      p.push_back(std::vector<double>(r.confidence.row(k).begin(),
                                      r.confidence.row(k).end()));
    }
  }
  return nlohmann::json{{"class_means", std::move(means)},
                        {"class_pixel_counts", counts},
                        {"confidence_matrix", std::move(p)},
                        {"confidence_gaps", r.gaps.values},
                        {"thresholds", to_json(r.thresholds)}};
}

}  // namespace cbt

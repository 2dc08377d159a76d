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
#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "cbt/error.hpp"
#include "json.hpp"

namespace cbt {

// Per-class confidence score: top-1 minus top-2 of the class's averaged
// probability vector. Absent classes carry a placeholder of 0 and are
// skipped when rescaling.
struct ConfidenceGaps {
  std::vector<double> values;
  std::vector<bool> absent;

  std::size_t size() const { return values.size(); }
};

// Per-class masking thresholds in [alpha, beta].
struct ThresholdVector {
  std::vector<double> thresholds;
  double alpha = 0.0;
  double beta = 1.0;
  std::vector<std::size_t> absent_classes;

  std::size_t num_classes() const { return thresholds.size(); }
  double operator[](std::size_t k) const { return thresholds[k]; }

  bool is_absent(std::size_t k) const {
    return std::find(absent_classes.begin(), absent_classes.end(), k) !=
           absent_classes.end();
  }

  friend bool operator==(const ThresholdVector&,
                         const ThresholdVector&) = default;
};

inline void check_alpha_beta(double alpha, double beta) {
  if (!(alpha > 0.0 && alpha <= 1.0 && beta > 0.0 && beta <= 1.0)) {
    throw ConfigError("alpha and beta must lie in (0, 1], got alpha=" +
                      std::to_string(alpha) + " beta=" + std::to_string(beta));
  }
  if (!(alpha < beta)) {
    throw ConfigError("alpha must be strictly less than beta, got alpha=" +
                      std::to_string(alpha) + " beta=" + std::to_string(beta));
  }
}

// Inverse min-max rescaling of the gaps onto [alpha, beta]: the most
// confident present class gets alpha, the least confident gets beta.
// Absent classes get beta. If every present gap is equal, all get beta.
inline ThresholdVector scale_thresholds(const ConfidenceGaps& gaps,
                                        double alpha, double beta) {
  check_alpha_beta(alpha, beta);
  ThresholdVector t;
  t.alpha = alpha;
  t.beta = beta;
  t.thresholds.assign(gaps.size(), beta);

  double lo = 0.0;
  double hi = 0.0;
  bool any = false;
  for (std::size_t k = 0; k < gaps.size(); ++k) {
    if (gaps.absent[k]) {
      t.absent_classes.push_back(k);
      continue;
    }
    const double g = gaps.values[k];
    lo = any ? std::min(lo, g) : g;
    hi = any ? std::max(hi, g) : g;
    any = true;
  }
  if (!any) throw DataError("no present class to calibrate thresholds from");
  if (hi == lo) return t;

  const double span = hi - lo;
  for (std::size_t k = 0; k < gaps.size(); ++k) {
    if (gaps.absent[k]) continue;
    const double g = gaps.values[k];
    if (g == hi) {
      t.thresholds[k] = alpha;
    } else if (g == lo) {
      t.thresholds[k] = beta;
    } else {
      const double v = (1.0 - (g - lo) / span) * (beta - alpha) + alpha;
      t.thresholds[k] = std::clamp(v, alpha, beta);
    }
  }
  return t;
}

inline void validate(const ThresholdVector& t) {
  try {
    check_alpha_beta(t.alpha, t.beta);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("thresholds: ") + e.what());
  }
  if (t.thresholds.size() < 2) {
    throw FormatError("thresholds: need at least 2 classes");
  }
  for (std::size_t k = 0; k < t.thresholds.size(); ++k) {
    const double v = t.thresholds[k];
    if (!(v >= t.alpha && v <= t.beta)) {
      throw FormatError("thresholds: entry " + std::to_string(k) + " = " +
                        std::to_string(v) + " outside [alpha, beta]");
    }
  }
  for (std::size_t k : t.absent_classes) {
    if (k >= t.thresholds.size()) {
      throw FormatError("thresholds: absent class " + std::to_string(k) +
                        " out of range");
    }
  }
}

inline void check_num_classes(const ThresholdVector& t,
                              std::size_t num_classes) {
  if (t.num_classes() != num_classes) {
    throw ConfigError("threshold vector has " +
                      std::to_string(t.num_classes()) +
                      " classes, model has " + std::to_string(num_classes));
  }
}

inline nlohmann::json to_json(const ThresholdVector& t) {
  return nlohmann::json{{"version", 1},
                        {"alpha", t.alpha},
                        {"beta", t.beta},
                        {"num_classes", t.num_classes()},
                        {"thresholds", t.thresholds},
                        {"absent_classes", t.absent_classes}};
}

inline std::string save_thresholds(const ThresholdVector& t) {
  return to_json(t).dump(2) + "\n";
}

inline ThresholdVector load_thresholds(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("thresholds: malformed JSON: ") + e.what());
  }
  ThresholdVector t;
  try {
    if (j.at("version").get<int>() != 1) {
      throw FormatError("thresholds: unsupported version " +
                        j.at("version").dump());
    }
    t.alpha = j.at("alpha").get<double>();
    t.beta = j.at("beta").get<double>();
    t.thresholds = j.at("thresholds").get<std::vector<double>>();
    t.absent_classes = j.value("absent_classes", std::vector<std::size_t>{});
    const auto k = j.at("num_classes").get<std::size_t>();
    if (k != t.thresholds.size()) {
      throw FormatError("thresholds: num_classes " + std::to_string(k) +
                        " but " + std::to_string(t.thresholds.size()) +
                        " entries");
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("thresholds: ") + e.what());
  }
  validate(t);
  return t;
}

}  // namespace cbt

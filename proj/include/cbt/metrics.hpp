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
#include <vector>

#include "cbt/error.hpp"
#include "cbt/model.hpp"
#include "json.hpp"

namespace cbt {

// counts[g][p]: pixels with ground truth g predicted as p.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t num_classes)
      : k_(num_classes), counts_(num_classes * num_classes, 0) {}

  std::size_t num_classes() const { return k_; }
  std::uint64_t at(std::size_t gt, std::size_t pred) const {
    return counts_[gt * k_ + pred];
  }
  void increment(std::size_t gt, std::size_t pred, std::uint64_t by = 1) {
    counts_[gt * k_ + pred] += by;
  }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& other) {
    if (other.k_ != k_) {
      throw UsageError("cannot add confusion matrices of different size");
    }
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    return *this;
  }

  friend bool operator==(const ConfusionMatrix&,
                         const ConfusionMatrix&) = default;

 private:
  std::size_t k_ = 0;
  std::vector<std::uint64_t> counts_;
};

template <typename Label>
void accumulate_confusion(ConfusionMatrix& cm, std::span<const Label> pred,
                          std::span<const std::uint8_t> gt,
                          std::optional<std::uint8_t> ignore_label) {
  if (pred.size() != gt.size()) {
    throw DataError("prediction has " + std::to_string(pred.size()) +
                    " pixels, ground truth " + std::to_string(gt.size()));
  }
  const std::size_t k = cm.num_classes();
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (ignore_label && gt[i] == *ignore_label) continue;
    const auto g = static_cast<std::size_t>(gt[i]);
    const auto p = static_cast<std::size_t>(pred[i]);
    if (g >= k || p >= k) {
      throw DataError("class id out of range at pixel " + std::to_string(i) +
                      " (gt " + std::to_string(g) + ", pred " +
                      std::to_string(p) + ", K " + std::to_string(k) + ")");
    }
    cm.increment(g, p);
  }
}

template <typename Label>
ConfusionMatrix accumulate_confusion(std::size_t num_classes,
                                     std::span<const Label> pred,
                                     std::span<const std::uint8_t> gt,
                                     std::optional<std::uint8_t> ignore_label) {
  ConfusionMatrix cm(num_classes);
  accumulate_confusion(cm, pred, gt, ignore_label);
  return cm;
}

struct MiouResult {
  double miou = 0.0;
  // nullopt for classes absent from both prediction and ground truth.
  std::vector<std::optional<double>> per_class;
};

inline MiouResult miou(const ConfusionMatrix& cm) {
  const std::size_t k = cm.num_classes();
  MiouResult r;
  r.per_class.resize(k);
  long double sum = 0.0L;
  std::size_t included = 0;
  for (std::size_t c = 0; c < k; ++c) {
    std::uint64_t row = 0;
    std::uint64_t col = 0;
    for (std::size_t j = 0; j < k; ++j) {
      row += cm.at(c, j);
      col += cm.at(j, c);
    }
    const std::uint64_t tp = cm.at(c, c);
    const std::uint64_t denom = row + col - tp;
    if (denom == 0) continue;
    const long double iou =
        static_cast<long double>(tp) / static_cast<long double>(denom);
    r.per_class[c] = static_cast<double>(iou);
    sum += iou;
    ++included;
  }
  if (included == 0) {
    throw DataError("mIoU undefined: no class has a nonzero IoU denominator");
  }
  r.miou = static_cast<double>(sum / static_cast<long double>(included));
  return r;
}

struct ExitReport {
  std::size_t exit = 0;  // 1-based
  double miou = 0.0;
  std::vector<std::optional<double>> per_class_iou;
  double mean_flops = 0.0;  // cumulative through this exit, per image
  double gflops = 0.0;
};

struct EvalReport {
  std::string policy;
  std::string model_id;
  std::string dataset_id;
  std::size_t num_images = 0;
  std::vector<ExitReport> exits;
  nlohmann::json run_config = nlohmann::json::object();
};

// Anytime prediction at `exit_index` (1-based): pixels finalized at or
// before that exit keep their frozen class, the rest take the exit's argmax.
inline std::vector<std::uint16_t> anytime_prediction(
    const AdaptiveResult& r, std::size_t exit_index) {
  const auto maps = argmax_channels(r.per_exit_probs.at(exit_index - 1));
  std::vector<std::uint16_t> pred = maps.classes;
  for (std::size_t pos = 0; pos < pred.size(); ++pos) {
    if (r.canvas.finalized(pos) && r.canvas.exit_at(pos) <= exit_index) {
      pred[pos] = r.canvas.class_at(pos);
    }
  }
  return pred;
}

// Streaming form of build_report: add images one at a time.
class ReportBuilder {
 public:
  ReportBuilder(std::size_t num_exits, std::size_t num_classes,
                std::optional<std::uint8_t> ignore_label)
      : ignore_(ignore_label),
        confusion_(num_exits, ConfusionMatrix(num_classes)),
        flops_(num_exits, 0) {}

  void add(const AdaptiveResult& r, std::span<const std::uint8_t> gt) {
    if (r.per_exit_probs.size() != confusion_.size() ||
        r.ledger.exit_totals().size() != confusion_.size()) {
      throw UsageError("result has " + std::to_string(r.per_exit_probs.size()) +
                       " exits, report expects " +
                       std::to_string(confusion_.size()));
    }
    for (const auto& p : r.per_exit_probs) {
      if (p.channels() != confusion_.front().num_classes()) {
        throw UsageError("result class count differs from report");
      }
    }
    for (std::size_t n = 0; n < confusion_.size(); ++n) {
      const auto pred = anytime_prediction(r, n + 1);
      accumulate_confusion<std::uint16_t>(confusion_[n], pred, gt, ignore_);
      flops_[n] += r.ledger.exit_totals()[n];
    }
    ++images_;
  }

  // Merge of per-image builders; call in image order.
  void merge(const ReportBuilder& other) {
    if (other.confusion_.size() != confusion_.size()) {
      throw UsageError("cannot merge reports with different exit counts");
    }
    for (std::size_t n = 0; n < confusion_.size(); ++n) {
      confusion_[n] += other.confusion_[n];
      flops_[n] += other.flops_[n];
    }
    images_ += other.images_;
  }

  const ConfusionMatrix& confusion(std::size_t exit_index) const {
    return confusion_.at(exit_index - 1);
  }

  EvalReport finish(std::string policy, std::string model_id,
                    std::string dataset_id) const {
    if (images_ == 0) throw DataError("no images evaluated");
    EvalReport rep{std::move(policy), std::move(model_id),
                   std::move(dataset_id), images_, {}, nlohmann::json::object()};
    for (std::size_t n = 0; n < confusion_.size(); ++n) {
      const auto m = miou(confusion_[n]);
      ExitReport e;
      e.exit = n + 1;
      e.miou = m.miou;
      e.per_class_iou = m.per_class;
      e.mean_flops =
          static_cast<double>(flops_[n]) / static_cast<double>(images_);
      e.gflops = e.mean_flops / 1e9;
      rep.exits.push_back(std::move(e));
    }
    return rep;
  }

 private:
  std::optional<std::uint8_t> ignore_;
  std::vector<ConfusionMatrix> confusion_;
  std::vector<std::uint64_t> flops_;
  std::size_t images_ = 0;
};

inline EvalReport build_report(std::span<const AdaptiveResult> results,
                               std::span<const std::vector<std::uint8_t>> gt,
                               const std::string& policy,
                               const std::string& model_id,
                               const std::string& dataset_id,
                               std::optional<std::uint8_t> ignore_label) {
  if (results.size() != gt.size()) {
    throw UsageError("results and labels differ in length");
  }
  if (results.empty()) throw DataError("no images evaluated");
  ReportBuilder b(results.front().per_exit_probs.size(),
                  results.front().per_exit_probs.front().channels(),
                  ignore_label);
  for (std::size_t i = 0; i < results.size(); ++i) b.add(results[i], gt[i]);
  return b.finish(policy, model_id, dataset_id);
}

inline std::string format_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json exits = nlohmann::json::array();
  for (const auto& e : r.exits) {
    nlohmann::json per_class = nlohmann::json::array();
    for (const auto& v : e.per_class_iou) {
      per_class.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
    }
    exits.push_back({{"exit", e.exit},
                     {"miou", e.miou},
                     {"per_class_iou", std::move(per_class)},
                     {"mean_flops", e.mean_flops},
                     {"gflops", e.gflops}});
  }
  return nlohmann::json{{"policy", r.policy},
                        {"model", r.model_id},
                        {"dataset", r.dataset_id},
                        {"num_images", r.num_images},
                        {"exits", std::move(exits)},
                        {"run_config", r.run_config}};
}

inline std::string report_csv(const EvalReport& r) {
  std::string out = "exit,miou,gflops\n";
  for (const auto& e : r.exits) {
    out += std::to_string(e.exit) + "," + format_fixed(e.miou, 6) + "," +
           format_fixed(e.gflops, 9) + "\n";
  }
  return out;
}

// Rows of a results table: one per policy, an (mIoU %, GFLOPs) pair per
// exit. mIoU is printed in percent with two decimals.
inline std::string table_layout(std::span<const EvalReport> reports,
                                int gflops_digits = 6) {
  if (reports.empty()) return {};
  const std::size_t n_exits = reports.front().exits.size();
  std::string out = "| Method |";
  for (std::size_t n = 1; n <= n_exits; ++n) {
    out += " Exit " + std::to_string(n) + " mIoU | Exit " + std::to_string(n) +
           " GFLOPs |";
  }
  out += "\n|---|";
  for (std::size_t n = 0; n < 2 * n_exits; ++n) out += "---|";
  out += "\n";
  for (const auto& r : reports) {
    out += "| " + r.policy + " |";
    for (const auto& e : r.exits) {
      out += " " + format_fixed(100.0 * e.miou, 2) + " | " +
             format_fixed(e.gflops, gflops_digits) + " |";
    }
    out += "\n";
  }
  return out;
}

}  // namespace cbt

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

// Subcommands of the `cbt` tool, kept in a header so tests can drive them
// in-process.

#include <openssl/evp.h>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cbt/cbt.hpp"
#include "json.hpp"

namespace cbt::cli {

namespace fs = std::filesystem;

inline constexpr double kDefaultBeta = 0.998;
inline const std::vector<double> kDefaultAlphas{0.7, 0.8, 0.9, 0.95, 0.99};

// SHA-1 of "blob <size>\0<content>", as printed by `git hash-object`.
inline std::string git_blob_hash(std::span<const std::uint8_t> content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (ctx == nullptr) throw Error("EVP_MD_CTX_new failed");
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, content.data(), content.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, digest, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw Error("SHA-1 digest failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xF];
  }
  return out;
}

inline std::string git_blob_hash(std::string_view text) {
  return git_blob_hash(std::span<const std::uint8_t>(
      reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// A loaded input file together with its content hash.
template <typename T>
struct Loaded {
  T value;
  std::string hash;
};

inline Loaded<MultiExitNet> load_model_file(const std::string& path) {
  const auto bytes = read_file(path);
  return {load_weights(bytes), git_blob_hash(bytes)};
}

inline Loaded<Dataset> load_dataset_file(const std::string& path,
                                         std::optional<std::uint8_t> ignore) {
  const auto bytes = read_file(path);
  auto ds = load_dataset(bytes);
  if (ds.empty()) throw DataError(path + ": dataset has no images");
  ds.validate_labels(ignore.value_or(kIgnoreLabel));
  return {std::move(ds), git_blob_hash(bytes)};
}

inline void check_compatible(const MultiExitNet& net, const Dataset& ds) {
  if (net.config.num_classes != ds.num_classes()) {
    throw ConfigError("dataset has " + std::to_string(ds.num_classes()) +
                      " classes, model has " +
                      std::to_string(net.config.num_classes));
  }
  if (net.config.input_channels != 3) {
    throw ConfigError("model expects " +
                      std::to_string(net.config.input_channels) +
                      " input channels, datasets are RGB");
  }
}

struct PolicySpec {
  ExitPolicy policy;
  nlohmann::json provenance;  // spec string and, for cbt:, thresholds hash
};

// "dense", "uniform:<t>" or "cbt:<thresholds.json>".
inline PolicySpec parse_policy_spec(const std::string& spec) {
  if (spec == "dense") return {DensePolicy{}, {{"spec", spec}}};
  if (spec.rfind("uniform:", 0) == 0) {
    const std::string v = spec.substr(8);
    std::size_t used = 0;
    double t = 0.0;
    try {
      t = std::stod(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != v.size()) {
      throw ConfigError("invalid uniform threshold in policy '" + spec + "'");
    }
    if (!(t > 0.0 && t <= 1.0)) {
      throw ConfigError("uniform threshold must be in (0, 1], got " + v);
    }
    return {UniformPolicy{t}, {{"spec", spec}}};
  }
  if (spec.rfind("cbt:", 0) == 0) {
    const std::string path = spec.substr(4);
    if (path.empty()) throw ConfigError("policy 'cbt:' needs a thresholds file");
    const auto bytes = read_file(path);
    auto t = load_thresholds(
        std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
    return {PerClassPolicy{std::move(t)},
            {{"spec", spec}, {"thresholds_hash", git_blob_hash(bytes)}}};
  }
  throw ConfigError("unknown policy '" + spec +
                    "' (expected dense, uniform:<t> or cbt:<file>)");
}

// ---------------------------------------------------------------------------
// generate-fixtures

struct GenerateOptions {
  std::uint64_t seed = 0;
  ModelConfig config;  // fixture model; the oracle model shares num_classes
  std::size_t num_images = 16;
  std::size_t height = 32;
  std::size_t width = 32;
  std::string out_dir = "fixtures";
};

struct FixtureSet {
  MultiExitNet fixture_model;
  MultiExitNet oracle_model;
  Dataset dataset;
};

inline FixtureSet make_fixtures(const GenerateOptions& o) {
  FixtureSet f;
  f.fixture_model = build_fixture_model(o.seed, o.config);
  f.oracle_model = build_oracle_model(
      o.config.num_classes,
      palette_oracle_table(default_oracle_gains(o.config.num_classes)));
  SyntheticSpec spec;
  spec.num_images = o.num_images;
  spec.num_classes = o.config.num_classes;
  spec.height = o.height;
  spec.width = o.width;
  spec.seed = o.seed;
  f.dataset = generate_synthetic_dataset(spec);
  return f;
}

inline std::vector<std::string> cmd_generate_fixtures(const GenerateOptions& o) {
  const auto f = make_fixtures(o);
  fs::create_directories(o.out_dir);
  const fs::path dir(o.out_dir);
  std::vector<std::string> written{(dir / "fixture_model.eenw").string(),
                                   (dir / "oracle_model.eenw").string(),
                                   (dir / "fixture_dataset.eesd").string()};
  write_file(written[0], save_weights(f.fixture_model));
  write_file(written[1], save_weights(f.oracle_model));
  write_file(written[2], save_dataset(f.dataset));
  return written;
}

// ---------------------------------------------------------------------------
// calibrate

struct CalibrateOptions {
  std::string model;
  std::string dataset;
  double alpha = 0.9;
  double beta = kDefaultBeta;
  std::optional<std::uint8_t> ignore_label = kIgnoreLabel;
  std::size_t jobs = 1;
  std::string out = "thresholds.json";
};

inline std::string diagnostics_path(const std::string& thresholds_path) {
  fs::path p(thresholds_path);
  return (p.parent_path() / (p.stem().string() + ".diagnostics.json")).string();
}

inline CalibrationResult cmd_calibrate(const CalibrateOptions& o) {
  check_alpha_beta(o.alpha, o.beta);
  const auto model = load_model_file(o.model);
  const auto data = load_dataset_file(o.dataset, o.ignore_label);
  check_compatible(model.value, data.value);
  auto r = calibrate(model.value, data.value, o.alpha, o.beta, o.ignore_label,
                     o.jobs);
  write_file(o.out, save_thresholds(r.thresholds));
  auto diag = diagnostics_json(r);
  diag["inputs"] = {{"model", model.hash}, {"dataset", data.hash}};
  write_file(diagnostics_path(o.out), diag.dump(2) + "\n");
  return r;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateOptions {
  std::string model;
  std::string dataset;
  std::string policy = "dense";
  std::optional<std::uint8_t> ignore_label = kIgnoreLabel;
  std::size_t jobs = 1;
  bool zero_fill_frozen = false;
  std::string out = "report";
};

// Strips a trailing .json/.csv so --out works as a prefix or a file name.
inline std::string output_prefix(const std::string& out) {
  for (const char* ext : {".json", ".csv"}) {
    const std::string e(ext);
    if (out.size() > e.size() && out.compare(out.size() - e.size(), e.size(), e) == 0) {
      return out.substr(0, out.size() - e.size());
    }
  }
  return out;
}

inline EvalReport evaluate_policy(const MultiExitNet& net, const Dataset& ds,
                                  const ExitPolicy& policy,
                                  std::optional<std::uint8_t> ignore,
                                  std::size_t jobs, AdaptiveOptions options = {}) {
  validate_policy(policy, net.config.num_classes);
  std::vector<ReportBuilder> partial(
      ds.size(),
      ReportBuilder(net.config.num_exits, net.config.num_classes, ignore));
  parallel_for(ds.size(), jobs, [&](std::size_t i) {
    const auto r = forward_adaptive(net, ds.image(i), policy, options);
    partial[i].add(r, ds.labels(i));
  });
  ReportBuilder total(net.config.num_exits, net.config.num_classes, ignore);
  for (const auto& p : partial) total.merge(p);
  return total.finish(describe(policy), "", "");
}

inline void write_report(const EvalReport& r, const std::string& prefix) {
  write_file(prefix + ".json", to_json(r).dump(2) + "\n");
  write_file(prefix + ".csv", report_csv(r));
}

inline EvalReport cmd_evaluate(const EvaluateOptions& o) {
  const auto spec = parse_policy_spec(o.policy);
  const auto model = load_model_file(o.model);
  const auto data = load_dataset_file(o.dataset, o.ignore_label);
  check_compatible(model.value, data.value);
  AdaptiveOptions options;
  if (o.zero_fill_frozen) options.frozen_reads = FrozenReads::kZero;
  auto rep = evaluate_policy(model.value, data.value, spec.policy,
                             o.ignore_label, o.jobs, options);
  rep.model_id = model.hash;
  rep.dataset_id = data.hash;
  rep.run_config = {
      {"command", "evaluate"},
      {"policy", spec.provenance},
      {"ignore_label", o.ignore_label ? nlohmann::json(*o.ignore_label)
                                      : nlohmann::json(nullptr)},
      {"zero_fill_frozen", o.zero_fill_frozen},
      {"model_config", to_json(model.value.config)}};
  if (const auto* pc = std::get_if<PerClassPolicy>(&spec.policy)) {
    rep.run_config["thresholds"] = to_json(pc->thresholds);
  }
  write_report(rep, output_prefix(o.out));
  return rep;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepOptions {
  std::string model;
  std::string dataset;
  std::vector<double> alphas = kDefaultAlphas;
  double beta = kDefaultBeta;
  std::optional<std::uint8_t> ignore_label = kIgnoreLabel;
  std::size_t jobs = 1;
  std::string out_dir = "sweep";
};

inline std::string alpha_tag(double a) { return format_real(a); }

struct SweepResult {
  EvalReport baseline;
  std::vector<std::pair<double, EvalReport>> per_alpha;
  std::vector<ThresholdVector> thresholds;
};

// The class means and gaps do not depend on alpha, so they are computed once
// and only the final rescaling runs per alpha.
inline SweepResult cmd_sweep(const SweepOptions& o) {
  if (o.alphas.empty()) throw ConfigError("sweep needs at least one alpha");
  std::vector<double> alphas;
  for (double a : o.alphas) {
    check_alpha_beta(a, o.beta);
    if (std::find(alphas.begin(), alphas.end(), a) == alphas.end()) alphas.push_back(a);
  }
  const auto model = load_model_file(o.model);
  const auto data = load_dataset_file(o.dataset, o.ignore_label);
  check_compatible(model.value, data.value);
  fs::create_directories(o.out_dir);
  const fs::path dir(o.out_dir);

  CalibrationResult cal;
  cal.means = accumulate_class_means(model.value, data.value, o.ignore_label,
                                     o.jobs);
  cal.confidence = average_over_layers(cal.means);
  cal.gaps = confidence_gaps(cal.confidence);

  const nlohmann::json base_config = {
      {"command", "sweep"},
      {"alphas", alphas},
      {"beta", o.beta},
      {"ignore_label", o.ignore_label ? nlohmann::json(*o.ignore_label)
                                      : nlohmann::json(nullptr)},
      {"model_config", to_json(model.value.config)}};

  auto finish = [&](EvalReport rep, nlohmann::json policy_info) {
    rep.model_id = model.hash;
    rep.dataset_id = data.hash;
    rep.run_config = base_config;
    rep.run_config["policy"] = std::move(policy_info);
    return rep;
  };

  SweepResult result;
  const std::string base_spec = "uniform:" + format_real(o.beta);
  result.baseline = finish(
      evaluate_policy(model.value, data.value, UniformPolicy{o.beta},
                      o.ignore_label, o.jobs),
      {{"spec", base_spec}});
  write_report(result.baseline,
               (dir / ("report_uniform_" + format_real(o.beta))).string());

  std::string csv = "policy,alpha,beta,exit,miou,gflops\n";
  auto append = [&](const EvalReport& rep, const std::string& alpha) {
    for (const auto& e : rep.exits) {
      csv += rep.policy + "," + alpha + "," + format_real(o.beta) + "," +
             std::to_string(e.exit) + "," + format_fixed(e.miou, 6) + "," +
             format_fixed(e.gflops, 9) + "\n";
    }
  };
  append(result.baseline, "");

  std::vector<EvalReport> table{result.baseline};
  for (double a : alphas) {
    auto t = scale_thresholds(cal.gaps, a, o.beta);
    const auto tpath = dir / ("thresholds_alpha_" + alpha_tag(a) + ".json");
    const auto ttext = save_thresholds(t);
    write_file(tpath.string(), ttext);
    auto rep = finish(evaluate_policy(model.value, data.value,
                                      PerClassPolicy{t}, o.ignore_label, o.jobs),
                      {{"spec", "cbt:" + tpath.filename().string()},
                       {"thresholds_hash", git_blob_hash(ttext)}});
    rep.run_config["thresholds"] = to_json(t);
    write_report(rep, (dir / ("report_cbt_alpha_" + alpha_tag(a))).string());
    append(rep, format_real(a));
    table.push_back(rep);
    result.thresholds.push_back(t);
    result.per_alpha.emplace_back(a, std::move(rep));
  }
  cal.thresholds = result.thresholds.front();
  auto diag = diagnostics_json(cal);
  diag.erase("thresholds");
  diag["inputs"] = {{"model", model.hash}, {"dataset", data.hash}};
  write_file((dir / "calibration.diagnostics.json").string(),
             diag.dump(2) + "\n");
  write_file((dir / "sweep.csv").string(), csv);
  write_file((dir / "table.md").string(), table_layout(table));
  return result;
}

// ---------------------------------------------------------------------------
// dump-logits (consumed by the trainer's parity check)

struct DumpLogitsOptions {
  std::string model;
  std::string dataset;
  std::size_t count = 4;
  std::string out = "logits.json";
};

inline nlohmann::json cmd_dump_logits(const DumpLogitsOptions& o) {
  const auto model = load_model_file(o.model);
  const auto data = load_dataset_file(o.dataset, kIgnoreLabel);
  check_compatible(model.value, data.value);
  const std::size_t n = std::min(o.count, data.value.size());
  nlohmann::json images = nlohmann::json::array();
  for (std::size_t i = 0; i < n; ++i) {
    const auto logits = dense_exit_logits(model.value, data.value.image(i));
    nlohmann::json exits = nlohmann::json::array();
    for (const auto& l : logits) {
      exits.push_back(std::vector<float>(l.data().begin(), l.data().end()));
    }
    images.push_back({{"index", i}, {"exits", std::move(exits)}});
  }
  nlohmann::json j{{"model", model.hash},
                   {"dataset", data.hash},
                   {"shape",
                    {model.value.config.num_classes, data.value.height(),
                     data.value.width()}},
                   {"images", std::move(images)}};
  write_file(o.out, j.dump() + "\n");
  return j;
}

}  // namespace cbt::cli

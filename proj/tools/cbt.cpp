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
#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "cbt_commands.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;

// Values from a JSON --config file fill in every option that was not given
// on the command line.
void apply_config_file(CLI::App& sub, const std::string& path) {
  const auto bytes = cbt::read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw cbt::FormatError(path + ": " + e.what());
  }
  if (!j.is_object()) throw cbt::FormatError(path + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    CLI::Option* opt = nullptr;
    try {
      opt = sub.get_option("--" + key);
    } catch (const CLI::OptionNotFound&) {
      throw cbt::ConfigError(path + ": unknown key '" + key + "'");
    }
    if (opt->count() > 0) continue;
    std::vector<std::string> items;
    auto as_text = [](const nlohmann::json& v) {
      return v.is_string() ? v.get<std::string>() : v.dump();
    };
    if (value.is_array()) {
      for (const auto& v : value) items.push_back(as_text(v));
    } else {
      items.push_back(as_text(value));
    }
    for (const auto& s : items) opt->add_result(s);
    opt->run_callback();
  }
}

std::optional<std::uint8_t> ignore_from(int v) {
  if (v < 0) return std::nullopt;
  if (v > 255) throw cbt::ConfigError("--ignore-label must be -1 or 0..255");
  return static_cast<std::uint8_t>(v);
}

}  // namespace

int main(int argc, char** argv) {
  namespace cli = cbt::cli;
  CLI::App app{"Early-exit segmentation runtime with class-based thresholds"};
  app.require_subcommand(1);

  std::string config_file;
  int ignore_label = cbt::kIgnoreLabel;

  // generate-fixtures
  cli::GenerateOptions gen;
  auto* g = app.add_subcommand("generate-fixtures",
                               "Write fixture/oracle weights and a synthetic dataset");
  g->add_option("--seed", gen.seed, "PRNG seed");
  g->add_option("--out", gen.out_dir, "Output directory");
  g->add_option("--num-classes", gen.config.num_classes);
  g->add_option("--num-exits", gen.config.num_exits);
  g->add_option("--trunk-width", gen.config.trunk_width);
  g->add_option("--blocks-per-stage", gen.config.blocks_per_stage);
  g->add_option("--kernel-size", gen.config.kernel_size);
  g->add_option("--num-images", gen.num_images);
  g->add_option("--height", gen.height);
  g->add_option("--width", gen.width);
  g->add_option("--config", config_file, "JSON file with option defaults");

  // calibrate
  cli::CalibrateOptions cal;
  auto* c = app.add_subcommand("calibrate", "Compute per-class thresholds");
  c->add_option("--model", cal.model)->required();
  c->add_option("--dataset", cal.dataset)->required();
  c->add_option("--alpha", cal.alpha);
  c->add_option("--beta", cal.beta);
  c->add_option("--ignore-label", ignore_label, "Label to skip, -1 for none");
  c->add_option("--jobs", cal.jobs);
  c->add_option("--seed", gen.seed, "Unused; accepted for uniform invocations");
  c->add_option("--out", cal.out, "Thresholds JSON path");
  c->add_option("--config", config_file, "JSON file with option defaults");

  // evaluate
  cli::EvaluateOptions ev;
  auto* e = app.add_subcommand("evaluate", "Run adaptive inference and report mIoU/GFLOPs");
  e->add_option("--model", ev.model)->required();
  e->add_option("--dataset", ev.dataset)->required();
  e->add_option("--policy", ev.policy, "dense | uniform:<t> | cbt:<thresholds.json>");
  e->add_option("--ignore-label", ignore_label, "Label to skip, -1 for none");
  e->add_option("--jobs", ev.jobs);
  e->add_option("--seed", gen.seed, "Unused; accepted for uniform invocations");
  e->add_flag("--zero-fill-frozen", ev.zero_fill_frozen,
              "Read frozen neighbours as zeros (experiment)");
  e->add_option("--out", ev.out, "Report path prefix (.json and .csv)");
  e->add_option("--config", config_file, "JSON file with option defaults");

  // sweep
  cli::SweepOptions sw;
  auto* s = app.add_subcommand("sweep", "Evaluate CBT over several alphas plus the uniform baseline");
  s->add_option("--model", sw.model)->required();
  s->add_option("--dataset", sw.dataset)->required();
  s->add_option("--alpha", sw.alphas, "Alpha values (repeatable)")->delimiter(',');
  s->add_option("--beta", sw.beta);
  s->add_option("--ignore-label", ignore_label, "Label to skip, -1 for none");
  s->add_option("--jobs", sw.jobs);
  s->add_option("--seed", gen.seed, "Unused; accepted for uniform invocations");
  s->add_option("--out", sw.out_dir, "Output directory");
  s->add_option("--config", config_file, "JSON file with option defaults");

  // dump-logits
  cli::DumpLogitsOptions dl;
  auto* d = app.add_subcommand("dump-logits", "Write dense exit logits as JSON");
  d->add_option("--model", dl.model)->required();
  d->add_option("--dataset", dl.dataset)->required();
  d->add_option("--count", dl.count, "Number of images");
  d->add_option("--out", dl.out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    for (auto* sub : {g, c, e, s}) {
      if (sub->parsed() && !config_file.empty()) apply_config_file(*sub, config_file);
    }
    const auto ignore = ignore_from(ignore_label);
    if (g->parsed()) {
      for (const auto& path : cli::cmd_generate_fixtures(gen)) {
        std::cout << path << "\n";
      }
    } else if (c->parsed()) {
      cal.ignore_label = ignore;
      const auto r = cli::cmd_calibrate(cal);
      std::cout << cbt::save_thresholds(r.thresholds);
    } else if (e->parsed()) {
      ev.ignore_label = ignore;
      const auto rep = cli::cmd_evaluate(ev);
      std::cout << cbt::table_layout(std::span(&rep, 1));
    } else if (s->parsed()) {
      sw.ignore_label = ignore;
      cli::cmd_sweep(sw);
      const auto table = cbt::read_file(
          (std::filesystem::path(sw.out_dir) / "table.md").string());
      std::cout << std::string(table.begin(), table.end());
    } else if (d->parsed()) {
      cli::cmd_dump_logits(dl);
    }
  } catch (const cbt::ConfigError& err) {
    std::cerr << "configuration error: " << err.what() << "\n";
    return kExitConfig;
  } catch (const cbt::UsageError& err) {
    std::cerr << "usage error: " << err.what() << "\n";
    return kExitConfig;
  } catch (const cbt::DataError& err) {
    std::cerr << "data error: " << err.what() << "\n";
    return kExitData;
  } catch (const std::filesystem::filesystem_error& err) {
    std::cerr << "io error: " << err.what() << "\n";
    return kExitData;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 0;
}

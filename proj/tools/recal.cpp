/*
 * Copyright 2026 The recal Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// recal: command-line front end. Every config key is also a flag
// (`--train.lr 0.003`); flags override `--config FILE`, which overrides
// RECAL_SEED, which overrides the built-in defaults.

#include <cstdio>
#include <exception>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "recal/recal.hpp"

namespace {

enum ExitCode : int {
  kOk = 0,
  kUnexpected = 1,
  kConfigError = 2,
  kDataError = 3,
  kNumericError = 4,
  kIoError = 5,
  kMissingGroups = 6,
};

int exit_code(recal::ErrorKind k) {
  switch (k) {
    case recal::ErrorKind::kConfig: return kConfigError;
    case recal::ErrorKind::kData: return kDataError;
    case recal::ErrorKind::kNumeric: return kNumericError;
    case recal::ErrorKind::kIo: return kIoError;
    case recal::ErrorKind::kMissingGroups: return kMissingGroups;
  }
  return kUnexpected;
}

void print(const recal::KvList& kvs) { recal::kv::write(std::cout, kvs); }

struct Command {
  const char* name;
  const char* help;
  std::function<void(const recal::ExperimentConfig&)> run;
};

const std::vector<Command>& commands() {
  using recal::ExperimentConfig;
  static const std::vector<Command> cmds = {
      {"gen-data", "write synthetic train/val/test splits",
       [](const ExperimentConfig& c) {
         const auto s = recal::run_gen_data(c);
         for (const auto* ds : {&s.train, &s.val, &s.test}) {
           std::map<std::uint32_t, std::size_t> counts;
           for (auto g : *ds->groups) ++counts[g];
           std::cout << to_string(ds->split) << ':';
           for (const auto& [g, n] : counts) std::cout << " g" << g << '=' << n;
           std::cout << '\n';
         }
       }},
      {"erm", "train the reference head with cross-entropy",
       [](const ExperimentConfig& c) { print(recal::run_erm(c).report); }},
      {"calibset", "build the calibration set from head.erm",
       [](const ExperimentConfig& c) {
         const auto cs = recal::run_calibset(c);
         std::cout << "n_anchors = " << cs.anchor_indices.size() << '\n';
         for (std::size_t k = 0; k < cs.n_classes(); ++k) {
           std::cout << "positive_pool." << k << ".size = " << cs.positive_pool[k].size() << '\n';
         }
       }},
      {"train", "recalibrate head.erm",
       [](const ExperimentConfig& c) { print(recal::run_train(c).report); }},
      {"eval", "group metrics of head.input on data.input",
       [](const ExperimentConfig& c) { print(recal::metrics_report(recal::run_eval(c))); }},
      {"sweep", "one recalibration per sweep value",
       [](const ExperimentConfig& c) {
         const auto rows = recal::run_sweep(c);
         std::cout << to_string(c.sweep.axis) << "\twga\tavg\tbest_epoch\n";
         for (const auto& r : rows) {
           std::cout << recal::kv::format_real(r.value) << '\t' << recal::kv::format_real(r.wga)
                     << '\t' << recal::kv::format_real(r.avg) << '\t' << r.best_epoch << '\n';
         }
       }},
      {"export-embeddings", "write head.input embeddings of data.input as TSV",
       [](const ExperimentConfig& c) { recal::run_export_embeddings(c); }},
      {"export-head", "write head.input (or the seeded initial head) as PRJ1 and TSV",
       [](const ExperimentConfig& c) { recal::run_export_head(c); }},
  };
  return cmds;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Last-layer group-robust recalibration of frozen embeddings", "recal"};
  app.set_version_flag("--version", std::string(recal::kVersion));
  app.require_subcommand(1);

  std::string config_file;
  // Flag values are kept as text and applied after the config file.
  std::map<std::string, std::string> flags;
  std::map<std::string, CLI::App*> subs;
  for (const auto& cmd : commands()) {
    auto* sub = app.add_subcommand(cmd.name, cmd.help);
    sub->add_option("--config", config_file, "key = value config file");
    for (const auto& f : recal::config_fields()) {
      sub->add_option("--" + f.key, flags[f.key], f.help);
    }
    subs[cmd.name] = sub;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  for (const auto& cmd : commands()) {
    auto* sub = subs[cmd.name];
    if (!sub->parsed()) continue;
    try {
      recal::ExperimentConfig cfg;
      recal::apply_environment(cfg);
      if (!config_file.empty()) recal::apply_config_file(cfg, config_file);
      for (const auto& f : recal::config_fields()) {
        if (sub->get_option("--" + f.key)->count() > 0) {
          recal::set_config_value(cfg, f.key, flags[f.key]);
        }
      }
      cmd.run(cfg);
      return kOk;
    } catch (const recal::Error& e) {
      std::cerr << "recal " << cmd.name << ": " << e.what() << '\n';
      return exit_code(e.kind());
    } catch (const std::exception& e) {
      std::cerr << "recal " << cmd.name << ": unexpected failure: " << e.what() << '\n';
      return kUnexpected;
    }
  }
  return kUnexpected;
}

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

#pragma once

// End-to-end commands over an ExperimentConfig. Each run_* function reads
// its inputs from the configured paths, writes its artifacts into cfg.out
// (which must already exist) together with `<command>.config`, the fully
// resolved configuration, and returns the in-memory results.

#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "recal/calibration.hpp"
#include "recal/config.hpp"
#include "recal/embedding_store.hpp"
#include "recal/error.hpp"
#include "recal/kv.hpp"
#include "recal/metrics.hpp"
#include "recal/projection_head.hpp"
#include "recal/rng.hpp"
#include "recal/training.hpp"

#ifndef RECAL_VERSION
#define RECAL_VERSION "unknown"
#endif

namespace recal {

inline constexpr std::string_view kVersion = RECAL_VERSION;
inline constexpr std::string_view kCliModule = "cli";

using KvList = std::vector<std::pair<std::string, std::string>>;

namespace detail {

inline std::string out_path(const ExperimentConfig& cfg, std::string_view name) {
  return (std::filesystem::path(cfg.out) / name).string();
}

inline void begin_run(const ExperimentConfig& cfg, std::string_view command) {
  cfg.validate();
  std::error_code ec;
  if (!std::filesystem::is_directory(cfg.out, ec)) {
    fail(ErrorKind::kIo, kCliModule, "output directory does not exist: " + cfg.out);
  }
  const std::string path = out_path(cfg, std::string(command) + ".config");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, kCliModule, "cannot write " + path);
  out << "# recal " << kVersion << "\n# command: " << command << '\n';
  kv::write(out, resolved_config(cfg));
  if (!out) fail(ErrorKind::kIo, kCliModule, "write failed: " + path);
}

inline EmbeddingDataset<double> load_split(const std::string& path, std::string_view key) {
  require(!path.empty(), ErrorKind::kConfig, kCliModule, std::string(key) + " is not set");
  return read_dataset<double>(path);
}

inline ProjectionHead<double> load_head(const std::string& path, std::string_view key) {
  require(!path.empty(), ErrorKind::kConfig, kCliModule, std::string(key) + " is not set");
  return read_head<double>(path);
}

inline void append_prefixed(KvList& dst, std::string_view prefix, const KvList& src) {
  for (const auto& [k, v] : src) dst.emplace_back(std::string(prefix) + k, v);
}

inline void require_unchanged(const EmbeddingDataset<double>& ds, std::uint64_t checksum,
                              std::string_view what) {
  require(feature_checksum(ds) == checksum, ErrorKind::kData, kCliModule,
          std::string(what) + " features changed during the run");
}

}  // namespace detail

/// ERM starting point: head.init when set, else a Gaussian head seeded from
/// the root seed.
inline ProjectionHead<double> initial_head(const ExperimentConfig& cfg, std::size_t d_in,
                                           std::size_t d_out) {
  if (!cfg.head_init.empty()) {
    auto h = read_head<double>(cfg.head_init);
    detail::require(h.d_in() == d_in && h.d_out() == d_out, ErrorKind::kData, kCliModule,
                    "head.init shape does not match the data");
    return h;
  }
  Rng rng = Rng(cfg.seed).split(streams::kHeadInit);
  return ProjectionHead<double>::gaussian(d_in, d_out, rng);
}

/// Writes train.vle, val.vle and test.vle with sidecars.
inline SyntheticSplits run_gen_data(const ExperimentConfig& cfg) {
  detail::begin_run(cfg, "gen-data");
  auto splits = generate_synthetic(cfg.synthetic_spec());
  write_dataset(splits.train, detail::out_path(cfg, "train.vle"));
  write_dataset(splits.val, detail::out_path(cfg, "val.vle"));
  write_dataset(splits.test, detail::out_path(cfg, "test.vle"));
  return splits;
}

struct ErmOutcome {
  TrainRecord<double> record;
  double train_avg = 0.0;
  GroupMetrics val;
  KvList report;
};

/// Outputs: erm_head.prj, erm_curve.tsv, erm_metrics.txt.
inline ErmOutcome run_erm(const ExperimentConfig& cfg) {
  detail::begin_run(cfg, "erm");
  const auto train = detail::load_split(cfg.data_train, "data.train");
  const auto val = detail::load_split(cfg.data_val, "data.val");
  const auto train_sum = feature_checksum(train);
  const auto head0 = initial_head(cfg, train.d_in(), train.d_out());

  ErmOutcome o;
  o.record = train_erm(training_view(train), val, head0, cfg.erm_config(), cfg.classifier);
  const auto& best = o.record.best_head;
  o.train_avg = average_accuracy(predict_all(best, train.features, train.anchors, cfg.classifier),
                                 train.labels);
  o.report.emplace_back("best_epoch", std::to_string(o.record.best_epoch));
  o.report.emplace_back("train.avg", kv::format_real(o.train_avg));
  if (val.has_groups()) {
    o.val = evaluate(best, val, cfg.classifier);
    detail::append_prefixed(o.report, "val.", metrics_report(o.val));
  }
  if (!cfg.data_test.empty()) {
    const auto test = read_dataset<double>(cfg.data_test);
    detail::append_prefixed(o.report, "test.", metrics_report(evaluate(best, test, cfg.classifier)));
  }
  detail::require_unchanged(train, train_sum, "training");

  write_head(best, detail::out_path(cfg, "erm_head.prj"));
  write_curve(o.record, detail::out_path(cfg, "erm_curve.tsv"));
  kv::write_file(detail::out_path(cfg, "erm_metrics.txt"), o.report, kCliModule);
  return o;
}

/// Output: calibset.txt.
inline CalibrationSet run_calibset(const ExperimentConfig& cfg) {
  detail::begin_run(cfg, "calibset");
  const auto train = detail::load_split(cfg.data_train, "data.train");
  const auto head = detail::load_head(cfg.head_erm, "head.erm");
  auto cs = build_calibration_set(training_view(train), head, cfg.classifier);
  write_calibration_set(cs, detail::out_path(cfg, "calibset.txt"));
  return cs;
}

struct TrainOutcome {
  CfrResult<double> result;
  KvList report;
};

/// Outputs: head.prj (validation-selected), curve.tsv, calibset.txt,
/// train_metrics.txt.
inline TrainOutcome run_train(const ExperimentConfig& cfg) {
  detail::begin_run(cfg, "train");
  const auto train = detail::load_split(cfg.data_train, "data.train");
  const auto val = detail::load_split(cfg.data_val, "data.val");
  const auto erm_head = detail::load_head(cfg.head_erm, "head.erm");
  const auto train_sum = feature_checksum(train);

  TrainOutcome o;
  o.result = train_cfr(training_view(train), val, erm_head, cfg.train_config(), cfg.classifier);
  const auto& rec = o.result.record;
  o.report.emplace_back("best_epoch", std::to_string(rec.best_epoch));
  o.report.emplace_back("n_anchors", std::to_string(o.result.calibration.anchor_indices.size()));
  if (val.has_groups()) {
    detail::append_prefixed(o.report, "val.",
                            metrics_report(evaluate(rec.best_head, val, cfg.classifier)));
  }
  if (!cfg.data_test.empty()) {
    const auto test = read_dataset<double>(cfg.data_test);
    detail::append_prefixed(o.report, "test.",
                            metrics_report(evaluate(rec.best_head, test, cfg.classifier)));
  }
  for (std::size_t i = 0; i < rec.notes.size(); ++i) {
    o.report.emplace_back("note." + std::to_string(i), rec.notes[i]);
  }
  detail::require_unchanged(train, train_sum, "training");

  write_head(rec.best_head, detail::out_path(cfg, "head.prj"));
  write_curve(rec, detail::out_path(cfg, "curve.tsv"));
  write_calibration_set(o.result.calibration, detail::out_path(cfg, "calibset.txt"));
  kv::write_file(detail::out_path(cfg, "train_metrics.txt"), o.report, kCliModule);
  return o;
}

/// Outputs: metrics.txt, groups.tsv.
inline GroupMetrics run_eval(const ExperimentConfig& cfg) {
  detail::begin_run(cfg, "eval");
  const auto ds = detail::load_split(cfg.data_input, "data.input");
  const auto head = detail::load_head(cfg.head_input, "head.input");
  auto m = evaluate(head, ds, cfg.classifier);
  kv::write_file(detail::out_path(cfg, "metrics.txt"), metrics_report(m), kMetricsModule);
  write_group_table(m, detail::out_path(cfg, "groups.tsv"));
  return m;
}

/// Output: sweep.tsv.
inline std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg) {
  detail::begin_run(cfg, "sweep");
  const auto train = detail::load_split(cfg.data_train, "data.train");
  const auto val = detail::load_split(cfg.data_val, "data.val");
  const auto test = detail::load_split(cfg.data_test, "data.test");
  const auto erm_head = detail::load_head(cfg.head_erm, "head.erm");
  auto rows = sweep(training_view(train), val, test, erm_head, cfg.train_config(), cfg.classifier,
                    cfg.sweep.axis, std::span<const double>(cfg.sweep.values));
  write_sweep_table(cfg.sweep.axis, rows, detail::out_path(cfg, "sweep.tsv"));
  return rows;
}

/// Output: embeddings.tsv.
inline void run_export_embeddings(const ExperimentConfig& cfg) {
  detail::begin_run(cfg, "export-embeddings");
  const auto ds = detail::load_split(cfg.data_input, "data.input");
  const auto head = detail::load_head(cfg.head_input, "head.input");
  export_embeddings(head, ds, detail::out_path(cfg, "embeddings.tsv"),
                    cfg.classifier.normalize_output);
}

/// Writes head.prj and head.tsv (one row per output dimension) for
/// head.input, or for the seeded initial head of synth.d_in x synth.d_out
/// when head.input is empty.
inline ProjectionHead<double> run_export_head(const ExperimentConfig& cfg) {
  detail::begin_run(cfg, "export-head");
  const auto head = cfg.head_input.empty() ? initial_head(cfg, cfg.synth.d_in, cfg.synth.d_out)
                                           : read_head<double>(cfg.head_input);
  write_head(head, detail::out_path(cfg, "head.prj"));
  const std::string path = detail::out_path(cfg, "head.tsv");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) detail::fail(ErrorKind::kIo, kCliModule, "cannot write " + path);
  for (Eigen::Index r = 0; r < head.weight.rows(); ++r) {
    for (Eigen::Index c = 0; c < head.weight.cols(); ++c) {
      out << (c ? "\t" : "") << kv::format_real(head.weight(r, c));
    }
    out << '\n';
  }
  if (!out) detail::fail(ErrorKind::kIo, kCliModule, "write failed: " + path);
  return head;
}

}  // namespace recal

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

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "recal/embedding_store.hpp"
#include "recal/error.hpp"
#include "recal/kv.hpp"
#include "recal/projection_head.hpp"

namespace recal {

inline constexpr std::string_view kMetricsModule = "metrics";

struct GroupCount {
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy() const {
    return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
  }
};

struct GroupMetrics {
  std::map<std::uint32_t, GroupCount> per_group;  // only groups with samples
  double wga = 0.0;
  double avg = 0.0;  // sample-weighted
  std::size_t correct = 0;
  std::size_t total = 0;
};

/// Worst-group and average accuracy from integer tallies. Empty groups never
/// appear, so they never set the minimum.
inline GroupMetrics group_metrics(std::span<const std::uint32_t> predictions,
                                  std::span<const std::uint32_t> labels,
                                  std::span<const std::uint32_t> groups) {
  detail::require(!labels.empty(), ErrorKind::kData, kMetricsModule, "empty dataset");
  detail::require(predictions.size() == labels.size() && groups.size() == labels.size(),
                  ErrorKind::kData, kMetricsModule, "prediction/label/group length mismatch");
  GroupMetrics m;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto& g = m.per_group[groups[i]];
    ++g.total;
    if (predictions[i] == labels[i]) {
      ++g.correct;
      ++m.correct;
    }
  }
  m.total = labels.size();
  m.avg = static_cast<double>(m.correct) / static_cast<double>(m.total);
  m.wga = std::numeric_limits<double>::infinity();
  for (const auto& [g, c] : m.per_group) m.wga = std::min(m.wga, c.accuracy());
  return m;
}

inline double average_accuracy(std::span<const std::uint32_t> predictions,
                               std::span<const std::uint32_t> labels) {
  detail::require(!labels.empty(), ErrorKind::kData, kMetricsModule, "empty dataset");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predictions[i] == labels[i];
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

template <typename Scalar>
GroupMetrics evaluate(const ProjectionHead<Scalar>& head, const EmbeddingDataset<Scalar>& ds,
                      const ClassifierConfig& cfg) {
  if (!ds.has_groups()) {
    detail::fail(ErrorKind::kMissingGroups, kMetricsModule,
                 "dataset carries no group labels; worst-group accuracy is undefined");
  }
  detail::require(ds.size() > 0, ErrorKind::kData, kMetricsModule, "empty dataset");
  const auto pred = predict_all(head, ds.features, ds.anchors, cfg);
  return group_metrics(pred, ds.labels, *ds.groups);
}

/// `key = value` report: wga, avg, correct, total, then one
/// group.<g>.accuracy line per group.
inline std::vector<std::pair<std::string, std::string>> metrics_report(const GroupMetrics& m) {
  std::vector<std::pair<std::string, std::string>> kvs;
  kvs.emplace_back("wga", kv::format_real(m.wga));
  kvs.emplace_back("avg", kv::format_real(m.avg));
  kvs.emplace_back("correct", std::to_string(m.correct));
  kvs.emplace_back("total", std::to_string(m.total));
  for (const auto& [g, c] : m.per_group) {
    kvs.emplace_back("group." + std::to_string(g) + ".accuracy", kv::format_real(c.accuracy()));
  }
  return kvs;
}

inline void write_group_table(const GroupMetrics& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) detail::fail(ErrorKind::kIo, kMetricsModule, "cannot write " + path);
  out << "group\tcorrect\ttotal\taccuracy\n";
  for (const auto& [g, c] : m.per_group) {
    out << g << '\t' << c.correct << '\t' << c.total << '\t' << kv::format_real(c.accuracy())
        << '\n';
  }
  if (!out) detail::fail(ErrorKind::kIo, kMetricsModule, "write failed: " + path);
}

/// Tab-separated: header, then index, label, group (-1 if absent) and the
/// d_out embedding coordinates under `head`.
template <typename Scalar>
void export_embeddings(const ProjectionHead<Scalar>& head, const EmbeddingDataset<Scalar>& ds,
                       const std::string& path, bool normalize = true) {
  detail::require(head.d_in() == ds.d_in(), ErrorKind::kData, kMetricsModule,
                  "head d_in does not match dataset");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) detail::fail(ErrorKind::kIo, kMetricsModule, "cannot write " + path);
  out << "index\tlabel\tgroup";
  for (std::size_t k = 0; k < head.d_out(); ++k) out << "\te" << k;
  out << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto u = forward(head, ds.feature(i), normalize);
    out << i << '\t' << ds.labels[i] << '\t';
    if (ds.groups) {
      out << (*ds.groups)[i];
    } else {
      out << -1;
    }
    for (Eigen::Index k = 0; k < u.size(); ++k) out << '\t' << kv::format_real(u[k]);
    out << '\n';
  }
  if (!out) detail::fail(ErrorKind::kIo, kMetricsModule, "write failed: " + path);
}

}  // namespace recal

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

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "recal/recal.hpp"

namespace fixtures {

using recal::ClassAnchors;
using recal::EmbeddingDataset;
using recal::Matrix;
using recal::ProjectionHead;
using recal::Rng;
using recal::Vector;

inline Matrix<double> random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix<double> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

inline Vector<double> random_unit(Eigen::Index n, Rng& rng) {
  Vector<double> v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.normal();
  return v / v.norm();
}

/// Random labelled dataset; labels cycle through the classes so every class
/// is present, groups (when requested) are 2 * label + (index parity).
inline EmbeddingDataset<double> random_dataset(std::size_t n, std::size_t d_in, std::size_t d_out,
                                               std::size_t n_classes, std::uint64_t seed,
                                               bool with_groups = true) {
  Rng rng(seed);
  EmbeddingDataset<double> ds;
  ds.features = random_matrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d_in), rng);
  ds.anchors = ClassAnchors<double>::from_rows(random_matrix(
      static_cast<Eigen::Index>(n_classes), static_cast<Eigen::Index>(d_out), rng));
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) ds.labels[i] = static_cast<std::uint32_t>(i % n_classes);
  if (with_groups) {
    std::vector<std::uint32_t> g(n);
    for (std::size_t i = 0; i < n; ++i) g[i] = 2 * ds.labels[i] + static_cast<std::uint32_t>(i / n_classes % 2);
    ds.groups = g;
    ds.n_groups = static_cast<std::uint32_t>(2 * n_classes);
  }
  return ds;
}

inline ProjectionHead<double> random_head(std::size_t d_in, std::size_t d_out, std::uint64_t seed) {
  Rng rng(seed);
  return ProjectionHead<double>(
      random_matrix(static_cast<Eigen::Index>(d_out), static_cast<Eigen::Index>(d_in), rng));
}

/// Fresh, empty directory under the system temp dir.
inline std::string temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("recal_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

inline std::string read_bytes(const std::string& path) {
  const auto b = recal::detail::slurp(path, "test");
  return std::string(b.begin(), b.end());
}

}  // namespace fixtures

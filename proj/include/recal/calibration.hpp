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

// Calibration-set construction from a reference head's mistakes, the
// positive/negative pools, batch samplers and the EMA class centroids.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "recal/embedding_store.hpp"
#include "recal/error.hpp"
#include "recal/kv.hpp"
#include "recal/numeric.hpp"
#include "recal/projection_head.hpp"
#include "recal/rng.hpp"

namespace recal {

inline constexpr std::string_view kSamplingModule = "calibration-sampling";

/// Features + labels + anchors, without the group column. Everything that
/// trains consumes this view, so group annotations cannot leak into
/// training. Holds references; the dataset must outlive it.
template <typename Scalar>
struct TrainingView {
  const Matrix<Scalar>* features = nullptr;
  std::span<const std::uint32_t> labels;
  const ClassAnchors<Scalar>* anchors = nullptr;

  std::size_t size() const { return labels.size(); }
  std::size_t n_classes() const { return anchors->n_classes(); }
  std::size_t d_in() const { return static_cast<std::size_t>(features->cols()); }
  std::size_t d_out() const { return anchors->d_out(); }
  auto feature(std::size_t i) const { return features->row(static_cast<Eigen::Index>(i)); }
  std::uint32_t label(std::size_t i) const { return labels[i]; }
};

template <typename Scalar>
TrainingView<Scalar> training_view(const EmbeddingDataset<Scalar>& ds) {
  return {&ds.features, std::span<const std::uint32_t>(ds.labels), &ds.anchors};
}

enum class PositiveMode { kDps, kRps, kCentroidOnly };
enum class NegativeMode { kRns, kNns };

inline std::string_view to_string(PositiveMode m) {
  switch (m) {
    case PositiveMode::kDps: return "DPS";
    case PositiveMode::kRps: return "RPS";
    case PositiveMode::kCentroidOnly: return "CENTROID_ONLY";
  }
  return "DPS";
}

inline std::string_view to_string(NegativeMode m) {
  return m == NegativeMode::kRns ? "RNS" : "NNS";
}

inline PositiveMode positive_mode_from_string(std::string_view s) {
  if (s == "DPS") return PositiveMode::kDps;
  if (s == "RPS") return PositiveMode::kRps;
  if (s == "CENTROID_ONLY") return PositiveMode::kCentroidOnly;
  detail::fail(ErrorKind::kConfig, kSamplingModule, "unknown positive mode '" + std::string(s) + "'");
}

inline NegativeMode negative_mode_from_string(std::string_view s) {
  if (s == "RNS") return NegativeMode::kRns;
  if (s == "NNS") return NegativeMode::kNns;
  detail::fail(ErrorKind::kConfig, kSamplingModule, "unknown negative mode '" + std::string(s) + "'");
}

struct SamplerConfig {
  PositiveMode positive_mode = PositiveMode::kDps;
  NegativeMode negative_mode = NegativeMode::kRns;
  std::size_t p_size = 16;
  std::size_t n_size = 16;
  std::size_t nns_candidate_size = 256;

  void validate() const {
    detail::require(p_size >= 1 || positive_mode == PositiveMode::kCentroidOnly,
                    ErrorKind::kConfig, kSamplingModule, "p_size must be >= 1");
    detail::require(n_size >= 1, ErrorKind::kConfig, kSamplingModule, "n_size must be >= 1");
    detail::require(nns_candidate_size >= n_size, ErrorKind::kConfig, kSamplingModule,
                    "nns_candidate_size must be >= n_size");
  }
};

struct CalibrationSet {
  std::vector<std::size_t> anchor_indices;               // misclassified by the reference head
  std::vector<std::vector<std::size_t>> positive_pool;   // [c]: label c, correctly predicted
  std::vector<std::vector<std::size_t>> negative_pool;   // [c]: label != c
  std::vector<std::uint32_t> reference_predictions;

  std::size_t n_classes() const { return positive_pool.size(); }
};

/// Runs `head` over the training view once and partitions the indices.
template <typename Scalar>
CalibrationSet build_calibration_set(const TrainingView<Scalar>& train,
                                     const ProjectionHead<Scalar>& head,
                                     const ClassifierConfig& cfg) {
  detail::require(train.size() > 0, ErrorKind::kData, kSamplingModule, "empty training set");
  detail::require(head.d_in() == train.d_in() && head.d_out() == train.d_out(),
                  ErrorKind::kData, kSamplingModule, "head shape does not match dataset");
  CalibrationSet cs;
  const std::size_t k = train.n_classes();
  cs.positive_pool.resize(k);
  cs.negative_pool.resize(k);
  cs.reference_predictions = predict_all(head, *train.features, *train.anchors, cfg);
  for (std::size_t i = 0; i < train.size(); ++i) {
    const std::uint32_t y = train.label(i);
    if (cs.reference_predictions[i] == y) {
      cs.positive_pool[y].push_back(i);
    } else {
      cs.anchor_indices.push_back(i);
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (c != y) cs.negative_pool[c].push_back(i);
    }
  }
  const bool any_positive = std::any_of(cs.positive_pool.begin(), cs.positive_pool.end(),
                                        [](const auto& p) { return !p.empty(); });
  detail::require(any_positive, ErrorKind::kData, kSamplingModule,
                  "every positive pool is empty: the reference head predicts nothing correctly");
  return cs;
}

/// `k` pool members, without replacement when the pool is large enough,
/// otherwise `k` independent uniform draws.
inline std::vector<std::size_t> draw_from_pool(std::span<const std::size_t> pool, std::size_t k,
                                               Rng& rng) {
  std::vector<std::size_t> out;
  out.reserve(k);
  if (pool.size() >= k) {
    for (std::size_t pos : rng.sample_distinct(pool.size(), k)) out.push_back(pool[pos]);
  } else {
    for (std::size_t i = 0; i < k; ++i) out.push_back(pool[rng.uniform_index(pool.size())]);
  }
  return out;
}

struct PositiveBatch {
  std::vector<std::size_t> samples;
  bool with_centroid = false;

  std::size_t size() const { return samples.size() + (with_centroid ? 1 : 0); }
};

/// DPS: p_size pool draws plus the class centroid. RPS: the draws only.
/// CENTROID_ONLY: the centroid alone.
template <typename Scalar>
PositiveBatch sample_positive(std::size_t anchor, const CalibrationSet& cs,
                              const TrainingView<Scalar>& train, Rng& rng,
                              const SamplerConfig& cfg) {
  const std::uint32_t y = train.label(anchor);
  PositiveBatch b;
  if (cfg.positive_mode == PositiveMode::kCentroidOnly) {
    b.with_centroid = true;
    return b;
  }
  const auto& pool = cs.positive_pool[y];
  if (pool.empty()) {
    detail::fail(ErrorKind::kData, kSamplingModule,
                 "positive pool of class " + std::to_string(y) + " is empty");
  }
  b.samples = draw_from_pool(pool, cfg.p_size, rng);
  b.with_centroid = cfg.positive_mode == PositiveMode::kDps;
  return b;
}

/// Stable ranking by descending cosine similarity to `query` in the input
/// (pre-projection) space; equal similarities keep the lower index first.
template <typename Scalar, typename Derived>
std::vector<std::size_t> rank_by_cosine(const Eigen::MatrixBase<Derived>& query,
                                        std::span<const std::size_t> candidates,
                                        const Matrix<Scalar>& features) {
  std::vector<std::pair<Scalar, std::size_t>> scored;
  scored.reserve(candidates.size());
  for (std::size_t idx : candidates) {
    scored.emplace_back(cosine(query, features.row(static_cast<Eigen::Index>(idx))), idx);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<std::size_t> out;
  out.reserve(scored.size());
  for (const auto& s : scored) out.push_back(s.second);
  return out;
}

/// RNS: uniform draws from the negative pool. NNS: a uniform candidate draw
/// of nns_candidate_size (the whole pool when smaller), then the n_size
/// candidates nearest to the anchor by cosine of the input features. When the
/// pool has fewer than n_size members the ranked list is cycled.
template <typename Scalar>
std::vector<std::size_t> sample_negative(std::size_t anchor, const CalibrationSet& cs,
                                         const TrainingView<Scalar>& train, Rng& rng,
                                         const SamplerConfig& cfg) {
  const std::uint32_t y = train.label(anchor);
  const auto& pool = cs.negative_pool[y];
  if (pool.empty()) {
    detail::fail(ErrorKind::kData, kSamplingModule,
                 "negative pool of class " + std::to_string(y) + " is empty");
  }
  if (cfg.negative_mode == NegativeMode::kRns) return draw_from_pool(pool, cfg.n_size, rng);

  std::vector<std::size_t> candidates;
  if (pool.size() <= cfg.nns_candidate_size) {
    candidates = pool;
  } else {
    candidates = draw_from_pool(pool, cfg.nns_candidate_size, rng);
  }
  const auto ranked = rank_by_cosine<Scalar>(train.feature(anchor), candidates, *train.features);
  std::vector<std::size_t> out;
  out.reserve(cfg.n_size);
  for (std::size_t i = 0; i < cfg.n_size; ++i) out.push_back(ranked[i % ranked.size()]);
  return out;
}

/// EMA class centroids, one unit-norm (or zero) row per class.
template <typename Scalar>
struct CentroidState {
  Matrix<Scalar> centroids;  // n_classes x d_out
  double gamma = 0.9;

  auto centroid(std::size_t c) const { return centroids.row(static_cast<Eigen::Index>(c)); }
};

/// (1 - gamma) c + gamma m, before re-normalization.
template <typename Scalar, typename DA, typename DB>
Vector<Scalar> ema_blend(const Eigen::MatrixBase<DA>& c, const Eigen::MatrixBase<DB>& batch_mean,
                         double gamma) {
  return (Scalar(1 - gamma) * c.derived().reshaped() +
          Scalar(gamma) * batch_mean.derived().reshaped())
      .eval();
}

/// One EMA step for class `y` from the embeddings (rows) of a positive batch
/// under the current head. The result is re-normalized.
template <typename Scalar>
void update_centroid(CentroidState<Scalar>& state, std::uint32_t y,
                     const Matrix<Scalar>& batch_embeddings) {
  detail::require(batch_embeddings.rows() > 0, ErrorKind::kData, kSamplingModule,
                  "empty positive batch in centroid update");
  detail::require(state.gamma > 0.0 && state.gamma <= 1.0, ErrorKind::kConfig,
                  kSamplingModule, "gamma must lie in (0, 1]");
  const Vector<Scalar> mean = batch_embeddings.colwise().mean().transpose();
  const Vector<Scalar> blended = ema_blend<Scalar>(state.centroid(y), mean, state.gamma);
  state.centroids.row(static_cast<Eigen::Index>(y)) = normalized_or_zero(blended).transpose();
}

/// Normalized mean of the normalized head outputs over `members`.
template <typename Scalar>
Vector<Scalar> exact_centroid(const ProjectionHead<Scalar>& head, const Matrix<Scalar>& features,
                              std::span<const std::size_t> members) {
  detail::require(!members.empty(), ErrorKind::kData, kSamplingModule,
                  "exact centroid of an empty set");
  Vector<Scalar> sum = Vector<Scalar>::Zero(static_cast<Eigen::Index>(head.d_out()));
  for (std::size_t i : members) sum += forward(head, features.row(static_cast<Eigen::Index>(i)));
  sum /= static_cast<Scalar>(members.size());
  return normalized_or_zero(sum);
}

/// Warm start: each class centroid is the exact centroid of its positive
/// pool under `head` (zero for an empty pool).
template <typename Scalar>
CentroidState<Scalar> init_centroids(const TrainingView<Scalar>& train, const CalibrationSet& cs,
                                      const ProjectionHead<Scalar>& head, double gamma) {
  CentroidState<Scalar> st;
  st.gamma = gamma;
  st.centroids = Matrix<Scalar>::Zero(static_cast<Eigen::Index>(train.n_classes()),
                                      static_cast<Eigen::Index>(head.d_out()));
  for (std::size_t c = 0; c < train.n_classes(); ++c) {
    if (cs.positive_pool[c].empty()) continue;
    st.centroids.row(static_cast<Eigen::Index>(c)) =
        exact_centroid(head, *train.features, cs.positive_pool[c]).transpose();
  }
  return st;
}

/// Index lists as `key = value` text: anchors, positive_pool.<c>, negative_pool.<c>.
inline void write_calibration_set(const CalibrationSet& cs, const std::string& path) {
  std::vector<std::pair<std::string, std::string>> kvs;
  kvs.emplace_back("n_anchors", std::to_string(cs.anchor_indices.size()));
  kvs.emplace_back("anchors", kv::join(cs.anchor_indices, " "));
  for (std::size_t c = 0; c < cs.n_classes(); ++c) {
    kvs.emplace_back("positive_pool." + std::to_string(c), kv::join(cs.positive_pool[c], " "));
  }
  for (std::size_t c = 0; c < cs.n_classes(); ++c) {
    kvs.emplace_back("negative_pool." + std::to_string(c), kv::join(cs.negative_pool[c], " "));
  }
  kv::write_file(path, kvs, kSamplingModule);
}

}  // namespace recal

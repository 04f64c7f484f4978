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

#include <gtest/gtest.h>

#include <algorithm>
#include <set>
#include <vector>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "recal/calibration.hpp"

namespace {

using recal::CalibrationSet;
using recal::ClassifierConfig;
using recal::Matrix;
using recal::NegativeMode;
using recal::PositiveMode;
using recal::ProjectionHead;
using recal::SamplerConfig;
using recal::Vector;

void expect_pool_invariants(const recal::EmbeddingDataset<double>& ds, const CalibrationSet& cs) {
  const auto& pred = cs.reference_predictions;
  std::set<std::size_t> anchors(cs.anchor_indices.begin(), cs.anchor_indices.end());
  for (std::size_t i = 0; i < ds.size(); ++i) EXPECT_EQ(anchors.count(i) == 1, pred[i] != ds.labels[i]);
  for (std::size_t c = 0; c < cs.n_classes(); ++c) {
    for (auto i : cs.positive_pool[c]) {
      EXPECT_EQ(ds.labels[i], c);
      EXPECT_EQ(pred[i], c);
      EXPECT_EQ(anchors.count(i), 0u);
    }
    for (auto i : cs.negative_pool[c]) EXPECT_NE(ds.labels[i], c);
    std::size_t others = 0;
    for (auto l : ds.labels) others += l != c;
    EXPECT_EQ(cs.negative_pool[c].size(), others);
  }
}

TEST(CalibrationSet, PoolInvariantsOverRandomHeads) {
  for (int t = 0; t < 30; ++t) {
    const auto ds = fixtures::random_dataset(60, 5, 3, 3, 1000 + t);
    const auto head = fixtures::random_head(5, 3, 2000 + t);
    try {
      const auto cs = recal::build_calibration_set(recal::training_view(ds), head, ClassifierConfig{});
      expect_pool_invariants(ds, cs);
    } catch (const recal::Error& e) {
      EXPECT_EQ(e.kind(), recal::ErrorKind::kData);  // every positive pool empty
    }
  }
}

// Two classes along axis 0; the head is the identity, anchors are -e0, +e0.
recal::EmbeddingDataset<double> line_dataset(const std::vector<double>& x,
                                             const std::vector<std::uint32_t>& y) {
  recal::EmbeddingDataset<double> ds;
  ds.features = Matrix<double>::Zero(static_cast<Eigen::Index>(x.size()), 2);
  for (std::size_t i = 0; i < x.size(); ++i) {
    ds.features(static_cast<Eigen::Index>(i), 0) = x[i];
    ds.features(static_cast<Eigen::Index>(i), 1) = 0.1;
  }
  ds.labels = y;
  Matrix<double> a(2, 2);
  a << -1, 0, 1, 0;
  ds.anchors.rows = a;
  return ds;
}

TEST(CalibrationSet, OneKnownMisprediction) {
  const auto ds = line_dataset({-1.0, 2.0, -0.5}, {0, 1, 1});
  const ProjectionHead<double> head(Matrix<double>::Identity(2, 2));
  const auto cs = recal::build_calibration_set(recal::training_view(ds), head, ClassifierConfig{});
  EXPECT_EQ(cs.anchor_indices, (std::vector<std::size_t>{2}));
  EXPECT_EQ(cs.positive_pool[0], (std::vector<std::size_t>{0}));
  EXPECT_EQ(cs.positive_pool[1], (std::vector<std::size_t>{1}));
}

TEST(CalibrationSet, PerfectHeadHasNoAnchors) {
  const auto ds = line_dataset({-1, -2, 1, 2}, {0, 0, 1, 1});
  const ProjectionHead<double> head(Matrix<double>::Identity(2, 2));
  const auto cs = recal::build_calibration_set(recal::training_view(ds), head, ClassifierConfig{});
  EXPECT_TRUE(cs.anchor_indices.empty());
}

TEST(CalibrationSet, ConstantPredictorLeavesMinorityPoolEmpty) {
  const auto ds = line_dataset({-1, -2, -3, -4}, {0, 0, 1, 1});  // always predicts class 0
  const ProjectionHead<double> head(Matrix<double>::Identity(2, 2));
  const auto cs = recal::build_calibration_set(recal::training_view(ds), head, ClassifierConfig{});
  EXPECT_EQ(cs.anchor_indices, (std::vector<std::size_t>{2, 3}));
  EXPECT_EQ(cs.positive_pool[0], (std::vector<std::size_t>{0, 1}));
  EXPECT_TRUE(cs.positive_pool[1].empty());
  recal::Rng rng(1);
  SamplerConfig cfg;
  EXPECT_THROW(recal::sample_positive(2, cs, recal::training_view(ds), rng, cfg), recal::Error);
  cfg.positive_mode = PositiveMode::kCentroidOnly;
  EXPECT_NO_THROW(recal::sample_positive(2, cs, recal::training_view(ds), rng, cfg));
}

TEST(CalibrationSet, EmptyTrainingSetIsAnError) {
  auto ds = line_dataset({}, {});
  const ProjectionHead<double> head(Matrix<double>::Identity(2, 2));
  EXPECT_THROW(recal::build_calibration_set(recal::training_view(ds), head, ClassifierConfig{}),
               recal::Error);
}

TEST(Sampler, WholePoolWhenSizesMatch) {
  recal::Rng rng(2);
  std::vector<std::size_t> pool(16);
  for (std::size_t i = 0; i < 16; ++i) pool[i] = 100 + i;
  auto d = recal::draw_from_pool(pool, 16, rng);
  EXPECT_NE(d, pool);
  std::sort(d.begin(), d.end());
  EXPECT_EQ(d, pool);
}

TEST(Sampler, SmallPoolFallsBackToReplacement) {
  recal::Rng rng(3);
  const std::vector<std::size_t> pool = {4, 9};
  const auto d = recal::draw_from_pool(pool, 10, rng);
  ASSERT_EQ(d.size(), 10u);
  for (auto x : d) EXPECT_TRUE(x == 4 || x == 9);
}

TEST(Sampler, SelectionFrequencyIsUniform) {
  recal::Rng rng(4);
  std::vector<std::size_t> pool(100);
  for (std::size_t i = 0; i < 100; ++i) pool[i] = i;
  std::vector<std::size_t> hits(100);
  for (int t = 0; t < 1000; ++t) {
    for (auto x : recal::draw_from_pool(pool, 16, rng)) ++hits[x];
  }
  for (auto h : hits) EXPECT_TRUE(oracle::within_binomial(h, 1000, 0.16)) << h;
}

TEST(Sampler, DpsHasOneMoreThanRps) {
  const auto ds = fixtures::random_dataset(40, 4, 3, 2, 5);
  const auto cs = recal::build_calibration_set(recal::training_view(ds),
                                               ProjectionHead<double>(fixtures::random_head(4, 3, 6)),
                                               ClassifierConfig{});
  ASSERT_FALSE(cs.positive_pool[0].empty());
  ASSERT_FALSE(cs.positive_pool[1].empty());
  SamplerConfig dps, rps;
  rps.positive_mode = PositiveMode::kRps;
  recal::Rng a(7), b(7);
  const auto bd = recal::sample_positive(0, cs, recal::training_view(ds), a, dps);
  const auto br = recal::sample_positive(0, cs, recal::training_view(ds), b, rps);
  EXPECT_EQ(bd.size(), br.size() + 1);
  EXPECT_EQ(bd.samples, br.samples);
  EXPECT_TRUE(bd.with_centroid);
  EXPECT_FALSE(br.with_centroid);
}

TEST(Sampler, NnsPicksHighestCosines) {
  // Anchor feature e0; five negatives with cosines 1.0, 0.9, 0.0, -0.5, -1.0.
  recal::EmbeddingDataset<double> ds;
  ds.features = Matrix<double>::Zero(6, 2);
  ds.features.row(0) << 1, 0;
  const double cosines[5] = {0.0, -1.0, 0.9, -0.5, 1.0};
  for (int k = 0; k < 5; ++k) {
    ds.features.row(k + 1) << cosines[k], std::sqrt(1 - cosines[k] * cosines[k]);
  }
  ds.labels = {0, 1, 1, 1, 1, 1};
  ds.anchors.rows = Matrix<double>::Identity(2, 2);
  CalibrationSet cs;
  cs.positive_pool = {{0}, {}};
  cs.negative_pool = {{1, 2, 3, 4, 5}, {0}};
  SamplerConfig cfg;
  cfg.negative_mode = NegativeMode::kNns;
  cfg.n_size = 2;
  recal::Rng rng(8);
  EXPECT_EQ(recal::sample_negative(0, cs, recal::training_view(ds), rng, cfg),
            (std::vector<std::size_t>{5, 3}));
}

TEST(Sampler, NnsTieBreakIsIndexStable) {
  recal::EmbeddingDataset<double> ds;
  ds.features = Matrix<double>::Zero(5, 2);
  ds.features.row(0) << 1, 0;
  ds.features.row(1) << 0, 1;
  ds.features.row(2) << 2, 0;  // cosine 1
  ds.features.row(3) << 0, 3;
  ds.features.row(4) << 5, 0;  // cosine 1
  ds.labels = {0, 1, 1, 1, 1};
  ds.anchors.rows = Matrix<double>::Identity(2, 2);
  CalibrationSet cs;
  cs.positive_pool = {{0}, {}};
  cs.negative_pool = {{4, 3, 2, 1}, {0}};
  SamplerConfig cfg;
  cfg.negative_mode = NegativeMode::kNns;
  cfg.n_size = 3;
  recal::Rng rng(9);
  EXPECT_EQ(recal::sample_negative(0, cs, recal::training_view(ds), rng, cfg),
            (std::vector<std::size_t>{2, 4, 1}));
}

TEST(Sampler, NnsEqualsExhaustiveTopK) {
  const auto ds = fixtures::random_dataset(80, 6, 3, 2, 10);
  const auto cs = recal::build_calibration_set(recal::training_view(ds),
                                               fixtures::random_head(6, 3, 11), ClassifierConfig{});
  SamplerConfig cfg;
  cfg.negative_mode = NegativeMode::kNns;
  cfg.n_size = 7;
  cfg.nns_candidate_size = 256;
  recal::Rng rng(12);
  const auto rows = oracle::to_rows(ds.features);
  for (std::size_t a = 0; a < ds.size(); a += 7) {
    const auto& pool = cs.negative_pool[ds.labels[a]];
    EXPECT_EQ(recal::sample_negative(a, cs, recal::training_view(ds), rng, cfg),
              oracle::exhaustive_top_k(rows[a], pool, rows, 7));
  }
}

TEST(Sampler, NnsWithCandidateDrawIsSortedSubset) {
  const auto ds = fixtures::random_dataset(200, 6, 3, 2, 13);
  const auto cs = recal::build_calibration_set(recal::training_view(ds),
                                               fixtures::random_head(6, 3, 14), ClassifierConfig{});
  SamplerConfig cfg;
  cfg.negative_mode = NegativeMode::kNns;
  cfg.n_size = 5;
  cfg.nns_candidate_size = 20;
  recal::Rng rng(15);
  const auto rows = oracle::to_rows(ds.features);
  const auto out = recal::sample_negative(0, cs, recal::training_view(ds), rng, cfg);
  ASSERT_EQ(out.size(), 5u);
  for (std::size_t k = 1; k < out.size(); ++k) {
    EXPECT_GE(oracle::cosine(rows[0], rows[out[k - 1]]), oracle::cosine(rows[0], rows[out[k]]));
  }
  for (auto i : out) EXPECT_NE(ds.labels[i], ds.labels[0]);
}

TEST(Sampler, EmptyNegativePoolIsAnError) {
  auto ds = line_dataset({-1, -2}, {0, 0});
  CalibrationSet cs;
  cs.positive_pool = {{0, 1}, {}};
  cs.negative_pool = {{}, {0, 1}};
  recal::Rng rng(16);
  EXPECT_THROW(recal::sample_negative(0, cs, recal::training_view(ds), rng, SamplerConfig{}),
               recal::Error);
}

TEST(SamplerConfig, Validation) {
  SamplerConfig c;
  c.n_size = 0;
  EXPECT_THROW(c.validate(), recal::Error);
  c = {};
  c.nns_candidate_size = 8;
  EXPECT_THROW(c.validate(), recal::Error);
  c = {};
  c.p_size = 0;
  EXPECT_THROW(c.validate(), recal::Error);
  c.positive_mode = PositiveMode::kCentroidOnly;
  EXPECT_NO_THROW(c.validate());
}

TEST(Centroid, EmaArithmetic) {
  Vector<double> c(2), m(2);
  c << 1, 0;
  m << 0, 1;
  const auto b = recal::ema_blend<double>(c, m, 0.9);
  EXPECT_NEAR(b[0], 0.1, 1e-15);
  EXPECT_NEAR(b[1], 0.9, 1e-15);
  recal::CentroidState<double> st{c.transpose(), 0.9};
  recal::update_centroid(st, 0, Matrix<double>(m.transpose()));
  EXPECT_NEAR(st.centroid(0).norm(), 1.0, 1e-15);
  EXPECT_NEAR(st.centroid(0)[1] / st.centroid(0)[0], 9.0, 1e-12);
}

TEST(Centroid, FixedPointAndGammaOne) {
  recal::Rng rng(17);
  const Vector<double> u = fixtures::random_unit(4, rng);
  recal::CentroidState<double> st{u.transpose(), 0.9};
  recal::update_centroid(st, 0, Matrix<double>(u.transpose()));
  EXPECT_LT((st.centroid(0).transpose() - u).norm(), 1e-15);

  const Matrix<double> batch = fixtures::random_matrix(5, 4, rng);
  st.gamma = 1.0;
  recal::update_centroid(st, 0, batch);
  const Vector<double> mean = batch.colwise().mean().transpose();
  EXPECT_LT((st.centroid(0).transpose() - mean.normalized()).norm(), 1e-15);
}

TEST(Centroid, TinyGammaBarelyMoves) {
  recal::Rng rng(18);
  const Vector<double> u = fixtures::random_unit(4, rng);
  recal::CentroidState<double> st{u.transpose(), 1e-9};
  recal::update_centroid(st, 0, fixtures::random_matrix(3, 4, rng));
  EXPECT_LT((st.centroid(0).transpose() - u).norm(), 1e-8);
}

TEST(Centroid, UnnormalizedRecurrenceMatchesGeometricSeries) {
  recal::Rng rng(19);
  const auto c0 = fixtures::random_unit(3, rng), m = fixtures::random_unit(3, rng);
  Vector<double> c = c0;
  for (int n = 1; n <= 15; ++n) {
    c = recal::ema_blend<double>(c, m, 0.3);
    const auto ref = oracle::ema_closed_form(oracle::to_vec(c0), oracle::to_vec(m), 0.3L, n);
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(c[i], double(ref[i]), 1e-14);
  }
}

TEST(Centroid, EmptyBatchIsAnError) {
  recal::CentroidState<double> st{Matrix<double>::Identity(2, 2), 0.9};
  EXPECT_THROW(recal::update_centroid(st, 0, Matrix<double>(0, 2)), recal::Error);
}

TEST(ExactCentroid, Cases) {
  const ProjectionHead<double> head(Matrix<double>::Identity(2, 2));
  Matrix<double> f(3, 2);
  f << 3, 4, -3, -4, 1, 0;
  const std::vector<std::size_t> one = {0}, anti = {0, 1};
  const auto c1 = recal::exact_centroid(head, f, one);
  EXPECT_NEAR(c1[0], 0.6, 1e-15);
  EXPECT_NEAR(c1[1], 0.8, 1e-15);
  EXPECT_TRUE(recal::exact_centroid(head, f, anti).isZero(0));
  EXPECT_THROW(recal::exact_centroid(head, f, std::vector<std::size_t>{}), recal::Error);

  recal::Rng rng(20);
  const auto h = fixtures::random_head(5, 3, 21);
  const Matrix<double> feats = fixtures::random_matrix(10, 5, rng);
  std::vector<std::size_t> all(10);
  for (std::size_t i = 0; i < 10; ++i) all[i] = i;
  oracle::Vec sum(3, 0.0L);
  const auto w = oracle::to_rows(h.weight);
  for (const auto& row : oracle::to_rows(feats)) {
    const auto u = oracle::project(w, row);
    for (int k = 0; k < 3; ++k) sum[k] += u[k];
  }
  const long double n = oracle::norm(sum);
  const auto c = recal::exact_centroid(h, feats, all);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(c[k], double(sum[k] / n), 1e-12);
}

TEST(CalibrationSet, ExportListsEveryPool) {
  const auto dir = fixtures::temp_dir("calib_export");
  const auto ds = line_dataset({-1.0, 2.0, -0.5}, {0, 1, 1});
  const ProjectionHead<double> head(Matrix<double>::Identity(2, 2));
  const auto cs = recal::build_calibration_set(recal::training_view(ds), head, ClassifierConfig{});
  recal::write_calibration_set(cs, dir + "/cs.txt");
  EXPECT_EQ(fixtures::read_bytes(dir + "/cs.txt"),
            "n_anchors = 1\nanchors = 2\npositive_pool.0 = 0\npositive_pool.1 = 1\n"
            "negative_pool.0 = 1 2\nnegative_pool.1 = 0\n");
}

}  // namespace

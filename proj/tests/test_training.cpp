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

#include <cmath>
#include <vector>

#include "fixtures.hpp"
#include "recal/training.hpp"

namespace {

using recal::ClassifierConfig;
using recal::EpochRecord;
using recal::Matrix;
using recal::ProjectionHead;
using recal::SgdState;
using recal::TrainConfig;

TrainConfig sgd(double lr, double momentum, double wd) {
  TrainConfig c;
  c.lr = lr;
  c.momentum = momentum;
  c.weight_decay = wd;
  return c;
}

TEST(Sgd, PlainStep) {
  ProjectionHead<double> h(Matrix<double>::Ones(2, 3));
  const Matrix<double> g = Matrix<double>::Constant(2, 3, 0.5);
  SgdState<double> st;
  recal::sgd_step(h, g, st, sgd(0.1, 0.0, 0.0));
  EXPECT_TRUE(h.weight.isApproxToConstant(0.95, 1e-15));
}

TEST(Sgd, ZeroGradientIsFixedPoint) {
  const auto h0 = fixtures::random_head(3, 2, 1);
  auto h = h0;
  SgdState<double> st;
  recal::sgd_step(h, Matrix<double>(Matrix<double>::Zero(2, 3)), st, sgd(0.1, 0.9, 0.0));
  EXPECT_TRUE(h == h0);
}

TEST(Sgd, MomentumRecurrence) {
  const auto h0 = fixtures::random_head(3, 2, 2);
  auto h = h0;
  const Matrix<double> g = fixtures::random_head(3, 2, 3).weight;
  SgdState<double> st;
  const auto cfg = sgd(0.01, 0.9, 0.0);
  recal::sgd_step(h, g, st, cfg);
  recal::sgd_step(h, g, st, cfg);
  EXPECT_LT((h.weight - (h0.weight - 2.9 * 0.01 * g)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Sgd, WeightDecayWithoutMomentumShrinksMonotonically) {
  auto h = fixtures::random_head(4, 3, 4);
  SgdState<double> st;
  const auto cfg = sgd(0.1, 0.0, 0.05);
  double prev = h.weight.norm();
  for (int i = 0; i < 50; ++i) {
    recal::sgd_step(h, Matrix<double>(Matrix<double>::Zero(3, 4)), st, cfg);
    const double n = h.weight.norm();
    EXPECT_NEAR(n, prev * (1.0 - 0.1 * 0.05), 1e-12);
    prev = n;
  }
}

TEST(Sgd, NonFiniteGradientAborts) {
  auto h = fixtures::random_head(2, 2, 5);
  SgdState<double> st;
  Matrix<double> g = Matrix<double>::Zero(2, 2);
  g(1, 1) = std::nan("");
  try {
    recal::sgd_step(h, g, st, sgd(0.1, 0.9, 0.0));
    FAIL();
  } catch (const recal::Error& e) {
    EXPECT_EQ(e.kind(), recal::ErrorKind::kNumeric);
  }
}

TEST(Selection, EarliestTieWins) {
  std::vector<EpochRecord> curve;
  for (double w : {0.3, 0.7, 0.5, 0.7, 0.2}) {
    EpochRecord r;
    r.epoch = curve.size() + 1;
    r.val_wga = w;
    r.evaluated = true;
    curve.push_back(r);
  }
  EXPECT_EQ(recal::select_best_epoch(curve, true), 2u);
  curve[1].evaluated = false;
  EXPECT_EQ(recal::select_best_epoch(curve, true), 4u);
  for (auto& r : curve) r.evaluated = false;
  EXPECT_EQ(recal::select_best_epoch(curve, true), 0u);
}

struct Small {
  recal::SyntheticSplits s;
  ProjectionHead<double> head0;
};

Small small_problem(std::uint64_t seed = 0) {
  recal::SyntheticSpec spec;
  spec.train_groups = {300, 20, 8, 90};
  spec.val_groups = {40, 40, 20, 20};
  spec.test_groups = {40, 40, 20, 20};
  spec.seed = seed;
  Small p{recal::generate_synthetic(spec), {}};
  recal::Rng rng = recal::Rng(seed).split(recal::streams::kHeadInit);
  p.head0 = ProjectionHead<double>::gaussian(spec.d_in, spec.d_out, rng);
  return p;
}

TEST(Erm, ZeroLearningRateKeepsInitialHead) {
  const auto p = small_problem();
  auto cfg = sgd(0.0, 0.9, 0.0);
  cfg.epochs = 3;
  const auto rec = recal::train_erm(recal::training_view(p.s.train), p.s.val, p.head0, cfg, {});
  EXPECT_TRUE(rec.best_head == p.head0);
  EXPECT_EQ(rec.curve.size(), 3u);
}

TEST(Erm, DeterministicAndSelectionMatchesCurve) {
  const auto p = small_problem(3);
  TrainConfig cfg;
  cfg.lr = 1e-2;
  cfg.epochs = 6;
  cfg.anchor_batch = 32;
  const auto a = recal::train_erm(recal::training_view(p.s.train), p.s.val, p.head0, cfg, {});
  const auto b = recal::train_erm(recal::training_view(p.s.train), p.s.val, p.head0, cfg, {});
  EXPECT_TRUE(a.best_head == b.best_head);
  ASSERT_EQ(a.curve.size(), b.curve.size());
  for (std::size_t i = 0; i < a.curve.size(); ++i) {
    EXPECT_EQ(a.curve[i].train_loss, b.curve[i].train_loss);
    EXPECT_EQ(a.curve[i].val_wga, b.curve[i].val_wga);
  }
  EXPECT_EQ(a.best_epoch, recal::select_best_epoch(a.curve, true));
  const auto m = recal::evaluate(a.best_head, p.s.val, ClassifierConfig{});
  EXPECT_EQ(m.wga, a.curve[a.best_epoch - 1].val_wga);
}

TEST(Erm, ValidationWithoutGroupsSelectsByAverage) {
  auto p = small_problem();
  p.s.val.groups.reset();
  p.s.val.n_groups = 0;
  TrainConfig cfg;
  cfg.lr = 1e-2;
  cfg.epochs = 2;
  const auto rec = recal::train_erm(recal::training_view(p.s.train), p.s.val, p.head0, cfg, {});
  ASSERT_FALSE(rec.notes.empty());
  EXPECT_EQ(rec.best_epoch, recal::select_best_epoch(rec.curve, false));
}

TEST(Erm, EvalEveryThinsTheCurve) {
  const auto p = small_problem();
  TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.epochs = 5;
  cfg.eval_every = 2;
  const auto rec = recal::train_erm(recal::training_view(p.s.train), p.s.val, p.head0, cfg, {});
  std::vector<bool> evaluated;
  for (const auto& r : rec.curve) evaluated.push_back(r.evaluated);
  EXPECT_EQ(evaluated, (std::vector<bool>{false, true, false, true, true}));
  EXPECT_TRUE(std::isnan(rec.curve[0].val_wga));
}

TEST(Erm, RejectsMismatchedData) {
  const auto p = small_problem();
  const auto wrong = fixtures::random_head(p.head0.d_in() + 1, p.head0.d_out(), 1);
  EXPECT_THROW(recal::train_erm(recal::training_view(p.s.train), p.s.val, wrong, TrainConfig{}, {}),
               recal::Error);
}

ProjectionHead<double> quick_erm(const Small& p) {
  TrainConfig cfg;
  cfg.lr = 1e-2;
  cfg.epochs = 1;
  return recal::train_erm(recal::training_view(p.s.train), p.s.val, p.head0, cfg, {}).best_head;
}

TEST(Cfr, ZeroEpochsKeepsReferenceHead) {
  const auto p = small_problem();
  const auto erm = quick_erm(p);
  TrainConfig cfg;
  cfg.epochs = 0;
  const auto res = recal::train_cfr(recal::training_view(p.s.train), p.s.val, erm, cfg, {});
  EXPECT_TRUE(res.record.best_head == erm);
  EXPECT_EQ(res.record.best_epoch, 0u);
  EXPECT_TRUE(res.record.curve.empty());
}

TEST(Cfr, DeterministicAndSelectionMatchesCurve) {
  const auto p = small_problem(5);
  const auto erm = quick_erm(p);
  TrainConfig cfg;
  cfg.lr = 3e-3;
  cfg.epochs = 5;
  cfg.seed = 9;
  for (auto neg : {recal::NegativeMode::kRns, recal::NegativeMode::kNns}) {
    cfg.sampler.negative_mode = neg;
    const auto a = recal::train_cfr(recal::training_view(p.s.train), p.s.val, erm, cfg, {});
    const auto b = recal::train_cfr(recal::training_view(p.s.train), p.s.val, erm, cfg, {});
    ASSERT_FALSE(a.cs_only);
    EXPECT_TRUE(a.record.best_head == b.record.best_head);
    EXPECT_TRUE(a.centroids.centroids == b.centroids.centroids);
    for (std::size_t i = 0; i < a.record.curve.size(); ++i) {
      EXPECT_EQ(a.record.curve[i].train_loss, b.record.curve[i].train_loss);
    }
    EXPECT_EQ(a.record.best_epoch, recal::select_best_epoch(a.record.curve, true));
  }
}

TEST(Cfr, LambdaChangesRecordedLoss) {
  const auto p = small_problem(6);
  const auto erm = quick_erm(p);
  TrainConfig cfg;
  cfg.lr = 3e-3;
  cfg.epochs = 1;
  const auto one = recal::train_cfr(recal::training_view(p.s.train), p.s.val, erm, cfg, {});
  cfg.loss.lambda = 0.0;
  const auto zero = recal::train_cfr(recal::training_view(p.s.train), p.s.val, erm, cfg, {});
  EXPECT_NE(one.record.curve[0].train_loss, zero.record.curve[0].train_loss);
}

TEST(Cfr, CentroidsStayUnitNorm) {
  const auto p = small_problem(7);
  const auto erm = quick_erm(p);
  TrainConfig cfg;
  cfg.lr = 3e-3;
  cfg.epochs = 2;
  for (auto mode : {recal::PositiveMode::kDps, recal::PositiveMode::kRps,
                    recal::PositiveMode::kCentroidOnly}) {
    cfg.sampler.positive_mode = mode;
    const auto res = recal::train_cfr(recal::training_view(p.s.train), p.s.val, erm, cfg, {});
    for (Eigen::Index c = 0; c < res.centroids.centroids.rows(); ++c) {
      EXPECT_NEAR(res.centroids.centroids.row(c).norm(), 1.0, 1e-12);
    }
  }
}

TEST(Cfr, PerfectReferenceFallsBackToCosineOnly) {
  recal::SyntheticSpec spec;
  spec.train_groups = {50, 50, 50, 50};
  spec.val_groups = {10, 10, 10, 10};
  spec.spurious_separation = 0.0;
  spec.noise_sigma = 0.05;
  const auto s = recal::generate_synthetic(spec);
  Matrix<double> w = Matrix<double>::Zero(static_cast<Eigen::Index>(spec.d_out),
                                          static_cast<Eigen::Index>(spec.d_in));
  w(0, 0) = 1.0;
  const ProjectionHead<double> perfect(w);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.cs_batch = 64;
  const auto res = recal::train_cfr(recal::training_view(s.train), s.val, perfect, cfg, {});
  EXPECT_TRUE(res.cs_only);
  EXPECT_FALSE(res.record.notes.empty());
  EXPECT_EQ(res.record.curve.size(), 2u);
}

TEST(Sweep, RowsFollowValuesAndRepeatDeterministically) {
  const auto p = small_problem(8);
  const auto erm = quick_erm(p);
  TrainConfig cfg;
  cfg.lr = 3e-3;
  cfg.epochs = 2;
  const std::vector<double> values = {0.5, 0.5, 2.0};
  const auto rows = recal::sweep(recal::training_view(p.s.train), p.s.val, p.s.test, erm, cfg, {},
                                 recal::SweepAxis::kLambda, values);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].wga, rows[1].wga);
  EXPECT_EQ(rows[0].avg, rows[1].avg);
  EXPECT_EQ(rows[0].best_epoch, rows[1].best_epoch);
  EXPECT_EQ(rows[2].value, 2.0);
  EXPECT_THROW(recal::with_axis_value(cfg, recal::SweepAxis::kPSize, 2.5), recal::Error);
  EXPECT_EQ(recal::with_axis_value(cfg, recal::SweepAxis::kNSize, 300).sampler.nns_candidate_size, 300u);
}

TEST(Curve, FileLayout) {
  recal::TrainRecord<double> rec;
  EpochRecord r;
  r.epoch = 1;
  r.train_loss = 0.5;
  r.val_wga = 0.25;
  r.val_avg = 0.75;
  r.evaluated = true;
  rec.curve.push_back(r);
  const auto dir = fixtures::temp_dir("curve");
  recal::write_curve(rec, dir + "/c.tsv");
  EXPECT_EQ(fixtures::read_bytes(dir + "/c.tsv"), "epoch\tloss\tval_wga\tval_avg\n1\t0.5\t0.25\t0.75\n");
}

}  // namespace

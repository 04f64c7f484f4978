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

// ERM head training, the recalibration loop, SGD with momentum, model
// selection by validation worst-group accuracy, and parameter sweeps.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "recal/calibration.hpp"
#include "recal/embedding_store.hpp"
#include "recal/error.hpp"
#include "recal/kv.hpp"
#include "recal/losses.hpp"
#include "recal/metrics.hpp"
#include "recal/projection_head.hpp"
#include "recal/rng.hpp"

namespace recal {

inline constexpr std::string_view kTrainingModule = "training";

struct TrainConfig {
  double lr = 1e-5;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t epochs = 100;
  std::size_t anchor_batch = 128;  // anchors per recalibration step; ERM minibatch size
  std::size_t cs_batch = 128;
  std::size_t eval_every = 1;
  double ema_gamma = 0.9;
  SamplerConfig sampler;
  LossConfig loss;
  std::uint64_t seed = 0;

  void validate() const {
    auto req = [](bool ok, const char* what) {
      detail::require(ok, ErrorKind::kConfig, kTrainingModule, what);
    };
    req(std::isfinite(lr) && lr >= 0.0, "lr must be finite and >= 0");
    req(momentum >= 0.0 && momentum < 1.0, "momentum must lie in [0, 1)");
    req(weight_decay >= 0.0 && std::isfinite(weight_decay), "weight_decay must be >= 0");
    req(anchor_batch >= 1 && cs_batch >= 1, "batch sizes must be >= 1");
    req(eval_every >= 1, "eval_every must be >= 1");
    req(ema_gamma > 0.0 && ema_gamma <= 1.0, "ema_gamma must lie in (0, 1]");
    sampler.validate();
    loss.validate();
  }
};

template <typename Scalar>
struct SgdState {
  Matrix<Scalar> velocity;
};

/// g' = grad + wd * W;  m <- momentum * m + g';  W <- W - lr * m.
template <typename Scalar>
void sgd_step(ProjectionHead<Scalar>& head, const Matrix<Scalar>& grad, SgdState<Scalar>& state,
              const TrainConfig& cfg) {
  detail::require(grad.rows() == head.weight.rows() && grad.cols() == head.weight.cols(),
                  ErrorKind::kData, kTrainingModule, "gradient shape does not match head");
  detail::require(grad.allFinite(), ErrorKind::kNumeric, kTrainingModule,
                  "non-finite gradient (max |g| = " +
                      kv::format_real(static_cast<double>(grad.cwiseAbs().maxCoeff())) + ")");
  if (state.velocity.size() == 0) {
    state.velocity = Matrix<Scalar>::Zero(head.weight.rows(), head.weight.cols());
  }
  state.velocity = Scalar(cfg.momentum) * state.velocity + grad + Scalar(cfg.weight_decay) * head.weight;
  head.weight -= Scalar(cfg.lr) * state.velocity;
}

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_wga = std::numeric_limits<double>::quiet_NaN();
  double val_avg = std::numeric_limits<double>::quiet_NaN();
  bool evaluated = false;
};

template <typename Scalar>
struct TrainRecord {
  std::vector<EpochRecord> curve;
  std::size_t best_epoch = 0;  // 0: no evaluated epoch, best_head is the initial head
  ProjectionHead<Scalar> best_head;
  std::vector<std::string> notes;
};

/// Earliest epoch with the highest selection score among evaluated epochs.
inline std::size_t select_best_epoch(const std::vector<EpochRecord>& curve, bool by_wga) {
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (const auto& r : curve) {
    if (!r.evaluated) continue;
    const double s = by_wga ? r.val_wga : r.val_avg;
    if (s > best_score) {
      best_score = s;
      best = r.epoch;
    }
  }
  return best;
}

namespace detail {

// Tracks validation metrics and keeps the best head seen so far.
template <typename Scalar>
class Selector {
 public:
  Selector(const EmbeddingDataset<Scalar>& val, const ClassifierConfig& ccfg,
           const ProjectionHead<Scalar>& initial, TrainRecord<Scalar>& rec)
      : val_(val), ccfg_(ccfg), rec_(rec) {
    rec_.best_head = initial;
    rec_.best_epoch = 0;
    if (!val.has_groups()) {
      rec_.notes.push_back(
          "validation split has no group labels; selecting by average accuracy");
    }
  }

  void observe(EpochRecord& r, const ProjectionHead<Scalar>& head) {
    r.evaluated = true;
    const auto pred = predict_all(head, val_.features, val_.anchors, ccfg_);
    double score = 0.0;
    if (val_.has_groups()) {
      const auto m = group_metrics(pred, val_.labels, *val_.groups);
      r.val_wga = m.wga;
      r.val_avg = m.avg;
      score = m.wga;
    } else {
      r.val_avg = average_accuracy(pred, val_.labels);
      score = r.val_avg;
    }
    if (score > best_score_) {
      best_score_ = score;
      rec_.best_epoch = r.epoch;
      rec_.best_head = head;
    }
  }

 private:
  const EmbeddingDataset<Scalar>& val_;
  const ClassifierConfig& ccfg_;
  TrainRecord<Scalar>& rec_;
  double best_score_ = -std::numeric_limits<double>::infinity();
};

template <typename Scalar>
void check_compatible(const TrainingView<Scalar>& train, const EmbeddingDataset<Scalar>& val,
                      const ProjectionHead<Scalar>& head) {
  require(train.size() > 0, ErrorKind::kData, kTrainingModule, "empty training split");
  require(val.size() > 0, ErrorKind::kData, kTrainingModule, "empty validation split");
  require(head.d_in() == train.d_in() && head.d_in() == val.d_in(), ErrorKind::kData,
          kTrainingModule, "d_in mismatch between head and datasets");
  require(head.d_out() == train.d_out() && *train.anchors == val.anchors, ErrorKind::kData,
          kTrainingModule, "train and validation anchors differ or do not match the head");
}

inline bool evaluate_epoch(std::size_t epoch, std::size_t epochs, std::size_t every) {
  return epoch % every == 0 || epoch == epochs;
}

}  // namespace detail

/// Minibatch SGD on the mean cross-entropy.
template <typename Scalar>
TrainRecord<Scalar> train_erm(const TrainingView<Scalar>& train, const EmbeddingDataset<Scalar>& val,
                              const ProjectionHead<Scalar>& head0, const TrainConfig& cfg,
                              const ClassifierConfig& ccfg) {
  cfg.validate();
  ccfg.validate();
  detail::check_compatible(train, val, head0);
  TrainRecord<Scalar> rec;
  detail::Selector<Scalar> selector(val, ccfg, head0, rec);
  ProjectionHead<Scalar> head = head0;
  SgdState<Scalar> opt;
  Rng rng = Rng(cfg.seed).split(streams::kErm);

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    KahanSum<double> loss_sum;
    for (std::size_t start = 0; start < order.size(); start += cfg.anchor_batch) {
      const std::size_t end = std::min(order.size(), start + cfg.anchor_batch);
      const std::span<const std::size_t> batch(order.data() + start, end - start);
      const auto lg = ce_loss_and_grad(head, *train.features, train.labels, batch, *train.anchors, ccfg);
      loss_sum += static_cast<double>(lg.loss) * static_cast<double>(batch.size());
      sgd_step(head, lg.grad, opt, cfg);
    }
    EpochRecord r;
    r.epoch = epoch;
    r.train_loss = loss_sum.value() / static_cast<double>(order.size());
    if (detail::evaluate_epoch(epoch, cfg.epochs, cfg.eval_every)) selector.observe(r, head);
    rec.curve.push_back(r);
  }
  return rec;
}

template <typename Scalar>
struct CfrResult {
  TrainRecord<Scalar> record;
  CalibrationSet calibration;
  CentroidState<Scalar> centroids;  // state after the last step
  bool cs_only = false;             // no anchors: cosine-loss-only training
};

/// Recalibration: builds the calibration set from `erm_head`, warm-starts
/// the centroids, then per step draws up to anchor_batch anchors with their
/// positive/negative batches plus a uniform cs_batch from the whole training
/// split, takes one SGD step on the total loss, and updates the centroid of
/// each anchor's class in anchor order with the updated head. An epoch is
/// one pass over the anchors.
template <typename Scalar>
CfrResult<Scalar> train_cfr(const TrainingView<Scalar>& train, const EmbeddingDataset<Scalar>& val,
                            const ProjectionHead<Scalar>& erm_head, const TrainConfig& cfg,
                            const ClassifierConfig& ccfg) {
  cfg.validate();
  ccfg.validate();
  detail::check_compatible(train, val, erm_head);
  CfrResult<Scalar> res;
  res.calibration = build_calibration_set(train, erm_head, ccfg);
  const CalibrationSet& cs = res.calibration;
  res.centroids = init_centroids(train, cs, erm_head, cfg.ema_gamma);
  auto& rec = res.record;
  detail::Selector<Scalar> selector(val, ccfg, erm_head, rec);
  ProjectionHead<Scalar> head = erm_head;
  SgdState<Scalar> opt;
  Rng rng = Rng(cfg.seed).split(streams::kCfr);

  std::vector<std::size_t> anchors = cs.anchor_indices;
  res.cs_only = anchors.empty();
  if (res.cs_only) {
    rec.notes.push_back("reference head makes no training errors; training with the cosine loss only");
  }
  const std::size_t steps_per_epoch =
      res.cs_only ? (train.size() + cfg.cs_batch - 1) / cfg.cs_batch
                  : (anchors.size() + cfg.anchor_batch - 1) / cfg.anchor_batch;
  const bool ema_from_extra_draw = cfg.sampler.positive_mode == PositiveMode::kCentroidOnly;

  std::vector<AnchorTerm> terms;
  std::vector<std::vector<std::size_t>> ema_batches;
  std::vector<std::size_t> cs_batch(cfg.cs_batch);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(anchors);
    KahanSum<double> loss_sum;
    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      terms.clear();
      ema_batches.clear();
      if (!res.cs_only) {
        const std::size_t start = step * cfg.anchor_batch;
        const std::size_t end = std::min(anchors.size(), start + cfg.anchor_batch);
        for (std::size_t k = start; k < end; ++k) {
          AnchorTerm t;
          t.anchor = anchors[k];
          t.positives = sample_positive(t.anchor, cs, train, rng, cfg.sampler);
          t.negatives = sample_negative(t.anchor, cs, train, rng, cfg.sampler);
          if (ema_from_extra_draw) {
            const auto& pool = cs.positive_pool[train.label(t.anchor)];
            ema_batches.push_back(cfg.sampler.p_size > 0 && !pool.empty()
                                      ? draw_from_pool(pool, cfg.sampler.p_size, rng)
                                      : std::vector<std::size_t>{});
          } else {
            ema_batches.push_back(t.positives.samples);
          }
          terms.push_back(std::move(t));
        }
      }
      for (auto& i : cs_batch) i = rng.uniform_index(train.size());

      const auto tl = total_loss(head, train, &res.centroids, std::span<const AnchorTerm>(terms),
                                 std::span<const std::size_t>(cs_batch), cfg.loss,
                                 ccfg.normalize_output);
      detail::require(std::isfinite(static_cast<double>(tl.loss)), ErrorKind::kNumeric,
                      kTrainingModule, "non-finite loss at epoch " + std::to_string(epoch));
      loss_sum += static_cast<double>(tl.loss);
      sgd_step(head, tl.grad, opt, cfg);

      for (std::size_t k = 0; k < terms.size(); ++k) {
        const auto& batch = ema_batches[k];
        if (batch.empty()) continue;
        Matrix<Scalar> emb(static_cast<Eigen::Index>(batch.size()),
                           static_cast<Eigen::Index>(head.d_out()));
        for (std::size_t j = 0; j < batch.size(); ++j) {
          emb.row(static_cast<Eigen::Index>(j)) =
              forward(head, train.feature(batch[j]), ccfg.normalize_output).transpose();
        }
        update_centroid(res.centroids, train.label(terms[k].anchor), emb);
      }
    }
    EpochRecord r;
    r.epoch = epoch;
    r.train_loss = steps_per_epoch == 0 ? 0.0 : loss_sum.value() / static_cast<double>(steps_per_epoch);
    if (detail::evaluate_epoch(epoch, cfg.epochs, cfg.eval_every)) selector.observe(r, head);
    rec.curve.push_back(r);
  }
  return res;
}

/// Tab-separated curve: epoch, loss, val_wga, val_avg.
template <typename Scalar>
void write_curve(const TrainRecord<Scalar>& rec, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) detail::fail(ErrorKind::kIo, kTrainingModule, "cannot write " + path);
  out << "epoch\tloss\tval_wga\tval_avg\n";
  for (const auto& r : rec.curve) {
    out << r.epoch << '\t' << kv::format_real(r.train_loss) << '\t'
        << kv::format_real(r.val_wga) << '\t' << kv::format_real(r.val_avg) << '\n';
  }
  if (!out) detail::fail(ErrorKind::kIo, kTrainingModule, "write failed: " + path);
}

enum class SweepAxis { kLambda, kPSize, kNSize };

inline std::string_view to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::kLambda: return "lambda";
    case SweepAxis::kPSize: return "p_size";
    case SweepAxis::kNSize: return "n_size";
  }
  return "lambda";
}

inline SweepAxis sweep_axis_from_string(std::string_view s) {
  if (s == "lambda") return SweepAxis::kLambda;
  if (s == "p_size") return SweepAxis::kPSize;
  if (s == "n_size") return SweepAxis::kNSize;
  detail::fail(ErrorKind::kConfig, kTrainingModule, "unknown sweep axis '" + std::string(s) + "'");
}

inline TrainConfig with_axis_value(TrainConfig cfg, SweepAxis axis, double value) {
  switch (axis) {
    case SweepAxis::kLambda:
      cfg.loss.lambda = value;
      break;
    case SweepAxis::kPSize:
    case SweepAxis::kNSize: {
      detail::require(value >= 1 && std::floor(value) == value, ErrorKind::kConfig,
                      kTrainingModule, "batch-size sweep values must be positive integers");
      (axis == SweepAxis::kPSize ? cfg.sampler.p_size : cfg.sampler.n_size) =
          static_cast<std::size_t>(value);
      cfg.sampler.nns_candidate_size = std::max(cfg.sampler.nns_candidate_size, cfg.sampler.n_size);
      break;
    }
  }
  return cfg;
}

struct SweepRow {
  double value = 0.0;
  double wga = 0.0;  // test split, head selected on validation
  double avg = 0.0;
  std::size_t best_epoch = 0;
};

/// One independent recalibration per value, all from the same root seed and
/// reference head; each row reports test metrics of the validation-selected head.
template <typename Scalar>
std::vector<SweepRow> sweep(const TrainingView<Scalar>& train, const EmbeddingDataset<Scalar>& val,
                            const EmbeddingDataset<Scalar>& test,
                            const ProjectionHead<Scalar>& erm_head, const TrainConfig& base,
                            const ClassifierConfig& ccfg, SweepAxis axis,
                            std::span<const double> values) {
  detail::require(!values.empty(), ErrorKind::kConfig, kTrainingModule, "empty sweep values");
  std::vector<SweepRow> rows;
  for (double v : values) {
    const TrainConfig cfg = with_axis_value(base, axis, v);
    const auto res = train_cfr(train, val, erm_head, cfg, ccfg);
    const auto m = evaluate(res.record.best_head, test, ccfg);
    rows.push_back({v, m.wga, m.avg, res.record.best_epoch});
  }
  return rows;
}

inline void write_sweep_table(SweepAxis axis, const std::vector<SweepRow>& rows,
                              const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) detail::fail(ErrorKind::kIo, kTrainingModule, "cannot write " + path);
  out << to_string(axis) << "\twga\tavg\tbest_epoch\n";
  for (const auto& r : rows) {
    out << kv::format_real(r.value) << '\t' << kv::format_real(r.wga) << '\t'
        << kv::format_real(r.avg) << '\t' << r.best_epoch << '\n';
  }
  if (!out) detail::fail(ErrorKind::kIo, kTrainingModule, "write failed: " + path);
}

}  // namespace recal

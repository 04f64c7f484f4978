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

// Recalibration objectives.
//
//   calibration loss, per anchor a with positive set P' and negatives N:
//     L_cal = -1/|P'| * sum_{p in P'} log( e^{z_p} / (e^{z_p} + sum_{n in N} e^{z_n}) )
//     z_p = <a, p> / tau,  z_n = <a, n> / tau
//   where P' = P u {c_y} (DPS), P (RPS) or {c_y} (CENTROID_ONLY).
//
//   cosine loss, per sample u with same-class set P and other-class set J:
//     L_cs = -sum_p cos(u, u_p) + sum_j cos(u, u_j)
//
//   total = lambda * sum_anchors L_cal + sum_{cs batch} L_cs
//
// Centroids are constants: their gradient slot is always zero.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "recal/calibration.hpp"
#include "recal/error.hpp"
#include "recal/numeric.hpp"
#include "recal/projection_head.hpp"

namespace recal {

inline constexpr std::string_view kLossModule = "losses";

struct LossConfig {
  double tau = 0.1;
  double lambda = 1.0;
  bool holistic = true;  // include the cosine-similarity term

  void validate() const {
    detail::require(tau > 0.0 && std::isfinite(tau), ErrorKind::kConfig, kLossModule,
                    "tau must be > 0");
    detail::require(std::isfinite(lambda) && lambda >= 0.0, ErrorKind::kConfig, kLossModule,
                    "lambda must be finite and >= 0");
  }
};

template <typename Scalar>
struct CalibLoss {
  Scalar loss{0};
  Vector<Scalar> grad_anchor;
  Matrix<Scalar> grad_positives;  // rows match `positives`; zero in CENTROID_ONLY mode
  Vector<Scalar> grad_centroid;   // always zero (stop-gradient)
  Matrix<Scalar> grad_negatives;
};

/// Calibration loss for one anchor embedding. `positives` and `negatives`
/// hold one embedding per row. `centroid` is required by DPS and
/// CENTROID_ONLY and ignored by RPS.
template <typename Scalar>
CalibLoss<Scalar> calib_loss(const Vector<Scalar>& anchor, const Matrix<Scalar>& positives,
                             const Vector<Scalar>* centroid, const Matrix<Scalar>& negatives,
                             PositiveMode mode, double tau) {
  detail::require(tau > 0.0, ErrorKind::kConfig, kLossModule, "tau must be > 0");
  const bool use_samples = mode != PositiveMode::kCentroidOnly;
  const bool use_centroid = mode != PositiveMode::kRps;
  if (use_centroid) {
    detail::require(centroid != nullptr, ErrorKind::kData, kLossModule,
                    "centroid required for this positive mode");
  }
  const Eigen::Index n_samples = use_samples ? positives.rows() : 0;
  const Eigen::Index n_pos = n_samples + (use_centroid ? 1 : 0);
  detail::require(n_pos > 0, ErrorKind::kData, kLossModule, "empty positive batch");

  const Scalar inv_tau = Scalar(1) / Scalar(tau);
  const Scalar inv_k = Scalar(1) / static_cast<Scalar>(n_pos);
  const Eigen::Index n_neg = negatives.rows();
  const Vector<Scalar> zn = negatives.rows() > 0 ? Vector<Scalar>(inv_tau * (negatives * anchor))
                                                 : Vector<Scalar>();
  const Scalar zn_max = n_neg > 0 ? zn.maxCoeff() : -std::numeric_limits<Scalar>::infinity();

  CalibLoss<Scalar> out;
  out.grad_anchor = Vector<Scalar>::Zero(anchor.size());
  out.grad_positives = Matrix<Scalar>::Zero(positives.rows(), anchor.size());
  out.grad_centroid = Vector<Scalar>::Zero(anchor.size());
  out.grad_negatives = Matrix<Scalar>::Zero(n_neg, anchor.size());
  Vector<Scalar> neg_weight = Vector<Scalar>::Zero(n_neg);  // sum_p dL/dz_n

  KahanSum<Scalar> total;
  auto one_positive = [&](const auto& p) -> Scalar {
    const Scalar zp = inv_tau * anchor.dot(p);
    const Scalar m = std::max(zp, zn_max);
    Scalar s = std::exp(zp - m);
    if (n_neg > 0) s += (zn.array() - m).exp().sum();
    const Scalar lse = m + std::log(s);
    total += lse - zp;
    if (n_neg > 0) neg_weight += inv_k * (zn.array() - lse).exp().matrix();
    return inv_k * (std::exp(zp - lse) - Scalar(1));  // dL/dz_p
  };

  for (Eigen::Index k = 0; k < n_samples; ++k) {
    const auto p = positives.row(k).transpose();
    const Scalar dz = one_positive(p);
    out.grad_anchor += dz * inv_tau * p;
    out.grad_positives.row(k) = (dz * inv_tau * anchor).transpose();
  }
  if (use_centroid) {
    const Scalar dz = one_positive(*centroid);
    out.grad_anchor += dz * inv_tau * (*centroid);
  }
  if (n_neg > 0) {
    out.grad_anchor += inv_tau * (negatives.transpose() * neg_weight);
    out.grad_negatives = inv_tau * (neg_weight * anchor.transpose());
  }
  out.loss = total.value() * inv_k;
  return out;
}

template <typename Scalar>
struct CosineLoss {
  Scalar loss{0};
  Vector<Scalar> grad_anchor;
  Matrix<Scalar> grad_same;
  Matrix<Scalar> grad_other;
};

namespace detail {

// d cos(a, b) / d a; zero when either operand is zero.
template <typename Scalar, typename DA, typename DB>
Vector<Scalar> cosine_grad(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b,
                           Scalar na, Scalar nb, Scalar cos_ab) {
  if (na == Scalar(0) || nb == Scalar(0)) return Vector<Scalar>::Zero(a.size());
  return (b / (na * nb) - cos_ab * a / (na * na)).eval();
}

}  // namespace detail

/// Cosine-similarity loss for one sample embedding `u`; rows of `same` and
/// `other` are same-class and other-class embeddings.
template <typename Scalar>
CosineLoss<Scalar> cs_loss(const Vector<Scalar>& u, const Matrix<Scalar>& same,
                           const Matrix<Scalar>& other) {
  detail::require(same.rows() + other.rows() > 0, ErrorKind::kData, kLossModule,
                  "cosine loss needs at least one comparison sample");
  CosineLoss<Scalar> out;
  out.grad_anchor = Vector<Scalar>::Zero(u.size());
  out.grad_same = Matrix<Scalar>::Zero(same.rows(), u.size());
  out.grad_other = Matrix<Scalar>::Zero(other.rows(), u.size());
  const Scalar nu = u.norm();
  KahanSum<Scalar> total;
  auto term = [&](const Matrix<Scalar>& set, Matrix<Scalar>& grad_set, Scalar sign) {
    for (Eigen::Index k = 0; k < set.rows(); ++k) {
      const Vector<Scalar> w = set.row(k).transpose();
      const Scalar nw = w.norm();
      const Scalar c = (nu == Scalar(0) || nw == Scalar(0)) ? Scalar(0) : u.dot(w) / (nu * nw);
      total += sign * c;
      out.grad_anchor += sign * detail::cosine_grad(u, w, nu, nw, c);
      grad_set.row(k) = (sign * detail::cosine_grad(w, u, nw, nu, c)).transpose();
    }
  };
  term(same, out.grad_same, Scalar(-1));
  term(other, out.grad_other, Scalar(1));
  out.loss = total.value();
  return out;
}

/// One anchor of a calibration batch with its sampled positives/negatives.
struct AnchorTerm {
  std::size_t anchor = 0;
  PositiveBatch positives;
  std::vector<std::size_t> negatives;
};

inline PositiveMode mode_of(const PositiveBatch& b) {
  if (!b.with_centroid) return PositiveMode::kRps;
  return b.samples.empty() ? PositiveMode::kCentroidOnly : PositiveMode::kDps;
}

template <typename Scalar>
struct TotalLoss {
  Scalar loss{0};
  Scalar calibration{0};  // sum of L_cal, before lambda
  Scalar cosine{0};       // sum of L_cs
  Matrix<Scalar> grad;    // d total / d W
};

namespace detail {

// Forward-pass cache keyed by sample index; iteration order is first use,
// so the gradient reduction is deterministic.
template <typename Scalar>
class EmbeddingCache {
 public:
  EmbeddingCache(const ProjectionHead<Scalar>& head, const TrainingView<Scalar>& data,
                 bool normalize)
      : head_(head), data_(data), normalize_(normalize) {}

  std::size_t slot(std::size_t sample) {
    auto [it, inserted] = index_.try_emplace(sample, samples_.size());
    if (inserted) {
      samples_.push_back(sample);
      proj_.push_back(project(head_, data_.feature(sample), normalize_));
      grad_.push_back(Vector<Scalar>::Zero(static_cast<Eigen::Index>(head_.d_out())));
    }
    return it->second;
  }

  const Vector<Scalar>& embedding(std::size_t s) const { return proj_[s].out; }
  Vector<Scalar>& grad(std::size_t s) { return grad_[s]; }

  Matrix<Scalar> gather(std::span<const std::size_t> slots) const {
    Matrix<Scalar> m(static_cast<Eigen::Index>(slots.size()),
                     static_cast<Eigen::Index>(head_.d_out()));
    for (std::size_t k = 0; k < slots.size(); ++k) {
      m.row(static_cast<Eigen::Index>(k)) = proj_[slots[k]].out.transpose();
    }
    return m;
  }

  Matrix<Scalar> weight_grad() const {
    Matrix<Scalar> g = Matrix<Scalar>::Zero(head_.weight.rows(), head_.weight.cols());
    for (std::size_t s = 0; s < samples_.size(); ++s) {
      accumulate_weight_grad(proj_[s], grad_[s], data_.feature(samples_[s]), g);
    }
    return g;
  }

 private:
  const ProjectionHead<Scalar>& head_;
  const TrainingView<Scalar>& data_;
  bool normalize_;
  std::unordered_map<std::size_t, std::size_t> index_;
  std::vector<std::size_t> samples_;
  std::vector<Projection<Scalar>> proj_;
  std::vector<Vector<Scalar>> grad_;
};

}  // namespace detail

/// lambda * sum of calibration losses over `anchors` plus the cosine loss of
/// every position in `cs_batch` against the other positions of that batch,
/// with the exact gradient with respect to W. Positions of `cs_batch` are
/// occurrences: a sample drawn twice is its own same-class partner.
template <typename Scalar>
TotalLoss<Scalar> total_loss(const ProjectionHead<Scalar>& head, const TrainingView<Scalar>& train,
                             const CentroidState<Scalar>* centroids,
                             std::span<const AnchorTerm> anchors,
                             std::span<const std::size_t> cs_batch, const LossConfig& cfg,
                             bool normalize_output = true) {
  cfg.validate();
  detail::EmbeddingCache<Scalar> cache(head, train, normalize_output);
  KahanSum<Scalar> cal_total;
  KahanSum<Scalar> cs_total;
  const Scalar lambda = Scalar(cfg.lambda);

  for (const AnchorTerm& t : anchors) {
    const std::size_t a = cache.slot(t.anchor);
    std::vector<std::size_t> pos_slots, neg_slots;
    for (std::size_t i : t.positives.samples) pos_slots.push_back(cache.slot(i));
    for (std::size_t i : t.negatives) neg_slots.push_back(cache.slot(i));
    const PositiveMode mode = mode_of(t.positives);
    Vector<Scalar> c;
    if (t.positives.with_centroid) {
      detail::require(centroids != nullptr, ErrorKind::kData, kLossModule,
                      "centroid state required");
      c = centroids->centroid(train.label(t.anchor)).transpose();
    }
    const auto r = calib_loss(cache.embedding(a), cache.gather(pos_slots),
                              t.positives.with_centroid ? &c : nullptr, cache.gather(neg_slots),
                              mode, cfg.tau);
    cal_total += r.loss;
    cache.grad(a) += lambda * r.grad_anchor;
    for (std::size_t k = 0; k < pos_slots.size(); ++k) {
      cache.grad(pos_slots[k]) += lambda * r.grad_positives.row(static_cast<Eigen::Index>(k)).transpose();
    }
    for (std::size_t k = 0; k < neg_slots.size(); ++k) {
      cache.grad(neg_slots[k]) += lambda * r.grad_negatives.row(static_cast<Eigen::Index>(k)).transpose();
    }
  }

  if (cfg.holistic && cs_batch.size() > 1) {
    std::vector<std::size_t> slots;
    slots.reserve(cs_batch.size());
    for (std::size_t i : cs_batch) slots.push_back(cache.slot(i));
    for (std::size_t p = 0; p < cs_batch.size(); ++p) {
      std::vector<std::size_t> same, other;
      for (std::size_t q = 0; q < cs_batch.size(); ++q) {
        if (q == p) continue;
        (train.label(cs_batch[q]) == train.label(cs_batch[p]) ? same : other).push_back(slots[q]);
      }
      const auto r = cs_loss(cache.embedding(slots[p]), cache.gather(same), cache.gather(other));
      cs_total += r.loss;
      cache.grad(slots[p]) += r.grad_anchor;
      for (std::size_t k = 0; k < same.size(); ++k) {
        cache.grad(same[k]) += r.grad_same.row(static_cast<Eigen::Index>(k)).transpose();
      }
      for (std::size_t k = 0; k < other.size(); ++k) {
        cache.grad(other[k]) += r.grad_other.row(static_cast<Eigen::Index>(k)).transpose();
      }
    }
  }

  TotalLoss<Scalar> out;
  out.calibration = cal_total.value();
  out.cosine = cs_total.value();
  KahanSum<Scalar> total;
  total += lambda * out.calibration;
  total += out.cosine;
  out.loss = total.value();
  out.grad = cache.weight_grad();
  return out;
}

}  // namespace recal

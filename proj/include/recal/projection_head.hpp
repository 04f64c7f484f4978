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

// The trainable linear projection f(v) = W v (no bias), classification
// against fixed class anchors, and analytic gradients with respect to W.
//
// PRJ1 head file, little-endian:
//   char[4] "PRJ1", u32 d_in, u32 d_out, f32 weights[d_out * d_in] row-major.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "recal/embedding_store.hpp"
#include "recal/error.hpp"
#include "recal/numeric.hpp"
#include "recal/rng.hpp"

namespace recal {

inline constexpr std::string_view kHeadModule = "projection-head";
inline constexpr std::array<char, 4> kHeadMagic = {'P', 'R', 'J', '1'};

template <typename Scalar>
struct ProjectionHead {
  Matrix<Scalar> weight;  // d_out x d_in

  ProjectionHead() = default;
  explicit ProjectionHead(Matrix<Scalar> w) : weight(std::move(w)) {}

  std::size_t d_in() const { return static_cast<std::size_t>(weight.cols()); }
  std::size_t d_out() const { return static_cast<std::size_t>(weight.rows()); }

  static ProjectionHead zeros(std::size_t d_in, std::size_t d_out) {
    return ProjectionHead(
        Matrix<Scalar>::Zero(static_cast<Eigen::Index>(d_out), static_cast<Eigen::Index>(d_in)));
  }

  /// Zero-mean Gaussian entries with variance 2 / (d_in + d_out).
  static ProjectionHead gaussian(std::size_t d_in, std::size_t d_out, Rng& rng) {
    ProjectionHead h = zeros(d_in, d_out);
    const double sd = std::sqrt(2.0 / static_cast<double>(d_in + d_out));
    for (Eigen::Index i = 0; i < h.weight.size(); ++i) {
      h.weight.data()[i] = static_cast<Scalar>(sd * rng.normal());
    }
    return h;
  }

  friend bool operator==(const ProjectionHead& a, const ProjectionHead& b) {
    return a.weight.rows() == b.weight.rows() && a.weight.cols() == b.weight.cols() &&
           a.weight == b.weight;
  }
};

struct ClassifierConfig {
  double beta = 100.0;
  bool normalize_output = true;
  // Whether the cross-entropy logits during ERM are scaled by beta as well.
  bool beta_in_erm = true;

  void validate() const {
    detail::require(std::isfinite(beta) && beta >= 0.0, ErrorKind::kConfig, kHeadModule,
                    "beta must be finite and non-negative");
  }
};

/// Result of one forward pass, kept around for the backward pass.
template <typename Scalar>
struct Projection {
  Vector<Scalar> out;   // f(v), normalized when requested
  Scalar raw_norm{0};   // ||W v||
  bool normalized = true;
};

namespace detail {

template <typename Scalar, typename Derived>
void check_input(const ProjectionHead<Scalar>& head, const Eigen::MatrixBase<Derived>& v) {
  require(static_cast<std::size_t>(v.size()) == head.d_in(), ErrorKind::kData, kHeadModule,
          "feature length " + std::to_string(v.size()) + " != head d_in " +
              std::to_string(head.d_in()));
}

}  // namespace detail

template <typename Scalar, typename Derived>
Projection<Scalar> project(const ProjectionHead<Scalar>& head,
                           const Eigen::MatrixBase<Derived>& v, bool normalize = true) {
  detail::check_input(head, v);
  Projection<Scalar> p;
  p.out = head.weight * v.derived().reshaped();
  p.raw_norm = p.out.norm();
  p.normalized = normalize;
  if (normalize && p.raw_norm > Scalar(0)) p.out /= p.raw_norm;
  return p;
}

/// W v, L2-normalized when `normalize`; a zero W v stays the zero vector.
template <typename Scalar, typename Derived>
Vector<Scalar> forward(const ProjectionHead<Scalar>& head, const Eigen::MatrixBase<Derived>& v,
                       bool normalize = true) {
  return project(head, v, normalize).out;
}

/// Accumulates dL/dW += (d out / d z)^T g v^T, where z = W v and g = dL/d out.
/// The zero-output case has zero gradient.
template <typename Scalar, typename DerivedG, typename DerivedV>
void accumulate_weight_grad(const Projection<Scalar>& p, const Eigen::MatrixBase<DerivedG>& g,
                            const Eigen::MatrixBase<DerivedV>& v, Matrix<Scalar>& grad_w) {
  Vector<Scalar> dz;
  if (p.normalized) {
    if (p.raw_norm == Scalar(0)) return;
    dz = (g - p.out * p.out.dot(g)) / p.raw_norm;
  } else {
    dz = g;
  }
  grad_w.noalias() += dz * v.derived().reshaped().transpose();
}

/// logit_c = beta * <f(v), u_c>.
template <typename Scalar, typename Derived>
Vector<Scalar> class_scores(const ProjectionHead<Scalar>& head, const Eigen::MatrixBase<Derived>& v,
                            const ClassAnchors<Scalar>& anchors, const ClassifierConfig& cfg) {
  detail::require(anchors.d_out() == head.d_out(), ErrorKind::kData, kHeadModule,
                  "anchor d_out != head d_out");
  const Vector<Scalar> u = forward(head, v, cfg.normalize_output);
  return Scalar(cfg.beta) * (anchors.rows * u);
}

/// Numerically stable softmax.
template <typename Scalar>
Vector<Scalar> softmax(const Vector<Scalar>& logits) {
  const Scalar m = logits.maxCoeff();
  Vector<Scalar> e = (logits.array() - m).exp().matrix();
  return e / e.sum();
}

/// argmax with ties going to the lowest class index.
template <typename Scalar>
std::uint32_t argmax(const Vector<Scalar>& x) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < x.size(); ++i) {
    if (x[i] > x[best]) best = i;
  }
  return static_cast<std::uint32_t>(best);
}

template <typename Scalar, typename Derived>
std::uint32_t predict(const ProjectionHead<Scalar>& head, const Eigen::MatrixBase<Derived>& v,
                      const ClassAnchors<Scalar>& anchors, const ClassifierConfig& cfg) {
  return argmax(class_scores(head, v, anchors, cfg));
}

template <typename Scalar>
std::vector<std::uint32_t> predict_all(const ProjectionHead<Scalar>& head,
                                       const Matrix<Scalar>& features,
                                       const ClassAnchors<Scalar>& anchors,
                                       const ClassifierConfig& cfg) {
  std::vector<std::uint32_t> out(static_cast<std::size_t>(features.rows()));
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    out[static_cast<std::size_t>(i)] = predict(head, features.row(i), anchors, cfg);
  }
  return out;
}

template <typename Scalar>
struct LossAndGrad {
  Scalar loss{0};
  Matrix<Scalar> grad;  // same shape as the head weight
};

/// Mean cross-entropy over the rows `batch` of `features` and its exact
/// gradient with respect to W.
template <typename Scalar>
LossAndGrad<Scalar> ce_loss_and_grad(const ProjectionHead<Scalar>& head,
                                     const Matrix<Scalar>& features,
                                     std::span<const std::uint32_t> labels,
                                     std::span<const std::size_t> batch,
                                     const ClassAnchors<Scalar>& anchors,
                                     const ClassifierConfig& cfg) {
  detail::require(!batch.empty(), ErrorKind::kData, kHeadModule, "empty batch");
  detail::require(anchors.d_out() == head.d_out(), ErrorKind::kData, kHeadModule,
                  "anchor d_out != head d_out");
  const Scalar beta = cfg.beta_in_erm ? Scalar(cfg.beta) : Scalar(1);
  LossAndGrad<Scalar> out;
  out.grad = Matrix<Scalar>::Zero(head.weight.rows(), head.weight.cols());
  KahanSum<Scalar> total;
  const Scalar inv_n = Scalar(1) / static_cast<Scalar>(batch.size());
  for (std::size_t idx : batch) {
    const auto v = features.row(static_cast<Eigen::Index>(idx));
    const auto p = project(head, v, cfg.normalize_output);
    const Vector<Scalar> logits = beta * (anchors.rows * p.out);
    const Scalar m = logits.maxCoeff();
    const Scalar lse = m + std::log((logits.array() - m).exp().sum());
    const std::uint32_t y = labels[idx];
    total += lse - logits[y];
    Vector<Scalar> dlogits = (logits.array() - lse).exp().matrix();
    dlogits[y] -= Scalar(1);
    const Vector<Scalar> g = (beta * inv_n) * (anchors.rows.transpose() * dlogits);
    accumulate_weight_grad(p, g, v, out.grad);
  }
  out.loss = total.value() * inv_n;
  return out;
}

/// Writes `head` as PRJ1 (f32 weights).
template <typename Scalar>
void write_head(const ProjectionHead<Scalar>& head, const std::string& path) {
  detail::require(head.weight.allFinite(), ErrorKind::kNumeric, kHeadModule,
                  "non-finite head weight");
  std::vector<unsigned char> buf;
  buf.insert(buf.end(), kHeadMagic.begin(), kHeadMagic.end());
  detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(head.d_in()));
  detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(head.d_out()));
  detail::put_matrix<float>(buf, head.weight);
  detail::spit(path, buf, kHeadModule);
}

template <typename Scalar = double>
ProjectionHead<Scalar> read_head(const std::string& path) {
  const auto bytes = detail::slurp(path, kHeadModule);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kHeadMagic.data(), 4) != 0) {
    detail::fail(ErrorKind::kData, kHeadModule, "bad magic in " + path + " (expected PRJ1)");
  }
  detail::ByteReader r(bytes, path);
  r.get<std::uint32_t>();
  const auto d_in = r.get<std::uint32_t>();
  const auto d_out = r.get<std::uint32_t>();
  detail::require(d_in > 0 && d_out > 0, ErrorKind::kData, kHeadModule, "zero dimension");
  detail::require(r.remaining() == std::uint64_t{d_in} * d_out * 4, ErrorKind::kData,
                  kHeadModule, "payload size mismatch in " + path);
  ProjectionHead<Scalar> head(detail::get_matrix<float, Scalar>(r, d_out, d_in, "weights"));
  detail::require(head.weight.allFinite(), ErrorKind::kData, kHeadModule,
                  "non-finite head weight in " + path);
  return head;
}

}  // namespace recal

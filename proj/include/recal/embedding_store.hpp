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

// Frozen embedding datasets: the in-memory model, the "VLE1" container,
// the optional `.meta` sidecar and the synthetic spurious-correlation
// generator.
//
// VLE1 layout, little-endian:
//   0  char[4]  magic "VLE1"
//   4  u32      version (1)
//   8  u64      n_samples
//   16 u32      d_in
//   20 u32      d_out
//   24 u32      n_classes
//   28 u32      flags   bit0: group column present, bit1: f64 payload
//   32 anchors  n_classes * d_out   (row-major)
//      features n_samples * d_in    (row-major)
//      labels   n_samples u32
//      groups   n_samples u32       (iff bit0)

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

#include "recal/error.hpp"
#include "recal/kv.hpp"
#include "recal/numeric.hpp"
#include "recal/rng.hpp"

namespace recal {

inline constexpr std::string_view kStoreModule = "embedding-store";

inline constexpr std::array<char, 4> kDatasetMagic = {'V', 'L', 'E', '1'};
inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::size_t kDatasetHeaderBytes = 32;
inline constexpr std::uint32_t kFlagGroups = 1u << 0;
inline constexpr std::uint32_t kFlagF64 = 1u << 1;

enum class SplitTag { kTrain, kVal, kTest };

inline std::string_view to_string(SplitTag s) {
  switch (s) {
    case SplitTag::kTrain: return "train";
    case SplitTag::kVal: return "val";
    case SplitTag::kTest: return "test";
  }
  return "train";
}

inline SplitTag split_from_string(std::string_view s) {
  if (s == "train") return SplitTag::kTrain;
  if (s == "val") return SplitTag::kVal;
  if (s == "test") return SplitTag::kTest;
  detail::fail(ErrorKind::kData, kStoreModule, "unknown split '" + std::string(s) + "'");
}

/// Fixed per-class text embeddings; row c is u_c, stored unit-norm.
template <typename Scalar>
struct ClassAnchors {
  Matrix<Scalar> rows;

  std::size_t n_classes() const { return static_cast<std::size_t>(rows.rows()); }
  std::size_t d_out() const { return static_cast<std::size_t>(rows.cols()); }

  /// Normalizes every row. Throws on zero rows or fewer than two classes.
  static ClassAnchors from_rows(Matrix<Scalar> m) {
    for (Eigen::Index c = 0; c < m.rows(); ++c) {
      const Scalar n = m.row(c).norm();
      detail::require(n > Scalar(0) && std::isfinite(n), ErrorKind::kData, kStoreModule,
                      "anchor row " + std::to_string(c) + " has zero or non-finite norm");
      m.row(c) /= n;
    }
    ClassAnchors a{std::move(m)};
    a.validate();
    return a;
  }

  void validate() const {
    detail::require(n_classes() >= 2, ErrorKind::kData, kStoreModule,
                    "need at least two classes");
    detail::require(rows.allFinite(), ErrorKind::kData, kStoreModule,
                    "non-finite anchor entry");
    for (Eigen::Index c = 0; c < rows.rows(); ++c) {
      const double n = static_cast<double>(rows.row(c).norm());
      detail::require(std::abs(n - 1.0) <= 1e-6, ErrorKind::kData, kStoreModule,
                      "anchor row " + std::to_string(c) + " is not unit-norm");
    }
  }

  template <typename Other>
  ClassAnchors<Other> cast() const {
    return ClassAnchors<Other>{rows.template cast<Other>()};
  }

  friend bool operator==(const ClassAnchors& a, const ClassAnchors& b) {
    return a.rows.rows() == b.rows.rows() && a.rows.cols() == b.rows.cols() &&
           a.rows == b.rows;
  }
};

template <typename Scalar>
struct EmbeddingDataset {
  Matrix<Scalar> features;  // n_samples x d_in, pre-projection features v
  std::vector<std::uint32_t> labels;
  std::optional<std::vector<std::uint32_t>> groups;
  std::uint32_t n_groups = 0;  // 0 when groups are absent
  ClassAnchors<Scalar> anchors;
  SplitTag split = SplitTag::kTrain;
  std::vector<std::string> class_names;  // sidecar only; may be empty
  std::string provenance;                // sidecar only

  std::size_t size() const { return labels.size(); }
  std::size_t d_in() const { return static_cast<std::size_t>(features.cols()); }
  std::size_t d_out() const { return anchors.d_out(); }
  std::size_t n_classes() const { return anchors.n_classes(); }
  bool has_groups() const { return groups.has_value(); }

  auto feature(std::size_t i) const { return features.row(static_cast<Eigen::Index>(i)); }

  void validate() const {
    anchors.validate();
    detail::require(static_cast<std::size_t>(features.rows()) == labels.size(),
                    ErrorKind::kData, kStoreModule, "feature rows != label count");
    detail::require(features.allFinite(), ErrorKind::kData, kStoreModule,
                    "non-finite feature entry");
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] >= n_classes()) {
        detail::fail(ErrorKind::kData, kStoreModule,
                     "label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                         " >= n_classes " + std::to_string(n_classes()));
      }
    }
    if (groups) {
      detail::require(groups->size() == labels.size(), ErrorKind::kData, kStoreModule,
                      "group column length != label count");
      for (std::size_t i = 0; i < groups->size(); ++i) {
        if ((*groups)[i] >= n_groups) {
          detail::fail(ErrorKind::kData, kStoreModule,
                       "group " + std::to_string((*groups)[i]) + " at row " +
                           std::to_string(i) + " >= n_groups " + std::to_string(n_groups));
        }
      }
    }
    if (!class_names.empty()) {
      detail::require(class_names.size() == n_classes(), ErrorKind::kData, kStoreModule,
                      "class name count != n_classes");
    }
  }

  friend bool operator==(const EmbeddingDataset& a, const EmbeddingDataset& b) {
    return a.features.rows() == b.features.rows() && a.features.cols() == b.features.cols() &&
           a.features == b.features && a.labels == b.labels && a.groups == b.groups &&
           a.n_groups == b.n_groups && a.anchors == b.anchors && a.split == b.split &&
           a.class_names == b.class_names && a.provenance == b.provenance;
  }
};

/// FNV-1a over the raw feature bytes; used to check features are never mutated.
template <typename Scalar>
std::uint64_t feature_checksum(const EmbeddingDataset<Scalar>& ds) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(ds.features.data());
  const std::size_t n = static_cast<std::size_t>(ds.features.size()) * sizeof(Scalar);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 0x100000001B3ULL;
  }
  return h;
}

namespace detail {

template <typename T>
void put_le(std::vector<unsigned char>& buf, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<unsigned char, sizeof(T)> raw{};
  std::memcpy(raw.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(raw.begin(), raw.end());
  }
  buf.insert(buf.end(), raw.begin(), raw.end());
}

class ByteReader {
 public:
  ByteReader(std::span<const unsigned char> data, std::string_view what)
      : data_(data), what_(what) {}

  template <typename T>
  T get() {
    if (data_.size() - pos_ < sizeof(T)) {
      fail(ErrorKind::kData, kStoreModule,
           "truncated payload in " + std::string(what_) + " at byte " + std::to_string(pos_));
    }
    std::array<unsigned char, sizeof(T)> raw{};
    std::memcpy(raw.data(), data_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
      std::reverse(raw.begin(), raw.end());
    }
    pos_ += sizeof(T);
    T out;
    std::memcpy(&out, raw.data(), sizeof(T));
    return out;
  }

  void need(std::uint64_t bytes, std::string_view section) const {
    if (data_.size() - pos_ < bytes) {
      fail(ErrorKind::kData, kStoreModule,
           "truncated payload: " + std::string(section) + " needs " + std::to_string(bytes) +
               " bytes, " + std::to_string(data_.size() - pos_) + " remain");
    }
  }

  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::span<const unsigned char> data_;
  std::size_t pos_ = 0;
  std::string_view what_;
};

inline std::vector<unsigned char> slurp(const std::string& path, std::string_view module) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, module, "cannot open " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  return buf;
}

inline void spit(const std::string& path, std::span<const unsigned char> bytes,
                 std::string_view module) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, module, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::kIo, module, "write failed: " + path);
}

template <typename Payload, typename Scalar>
void put_matrix(std::vector<unsigned char>& buf, const Matrix<Scalar>& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    put_le<Payload>(buf, static_cast<Payload>(m.data()[i]));
  }
}

template <typename Payload, typename Scalar>
Matrix<Scalar> get_matrix(ByteReader& r, std::uint64_t rows, std::uint64_t cols,
                          std::string_view section) {
  r.need(rows * cols * sizeof(Payload), section);
  Matrix<Scalar> m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = static_cast<Scalar>(r.get<Payload>());
  }
  return m;
}

}  // namespace detail

inline std::string meta_path(const std::string& path) { return path + ".meta"; }

/// Serializes `ds` as VLE1. The payload precision follows Scalar
/// (float -> f32, double -> f64). Writes the `.meta` sidecar when
/// `with_meta` is set.
template <typename Scalar>
void write_dataset(const EmbeddingDataset<Scalar>& ds, const std::string& path,
                   bool with_meta = true) {
  static_assert(std::is_same_v<Scalar, float> || std::is_same_v<Scalar, double>);
  ds.validate();
  constexpr bool f64 = std::is_same_v<Scalar, double>;
  std::vector<unsigned char> buf;
  buf.reserve(kDatasetHeaderBytes + sizeof(Scalar) * static_cast<std::size_t>(
                                                         ds.features.size() + ds.anchors.rows.size()) +
              8 * ds.size());
  buf.insert(buf.end(), kDatasetMagic.begin(), kDatasetMagic.end());
  detail::put_le<std::uint32_t>(buf, kDatasetVersion);
  detail::put_le<std::uint64_t>(buf, ds.size());
  detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(ds.d_in()));
  detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(ds.d_out()));
  detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(ds.n_classes()));
  const std::uint32_t flags = (ds.has_groups() ? kFlagGroups : 0u) | (f64 ? kFlagF64 : 0u);
  detail::put_le<std::uint32_t>(buf, flags);
  detail::put_matrix<Scalar>(buf, ds.anchors.rows);
  detail::put_matrix<Scalar>(buf, ds.features);
  for (auto l : ds.labels) detail::put_le<std::uint32_t>(buf, l);
  if (ds.groups) {
    for (auto g : *ds.groups) detail::put_le<std::uint32_t>(buf, g);
  }
  detail::spit(path, buf, kStoreModule);

  if (with_meta) {
    std::vector<std::pair<std::string, std::string>> meta;
    meta.emplace_back("split", std::string(to_string(ds.split)));
    meta.emplace_back("n_groups", std::to_string(ds.n_groups));
    if (!ds.class_names.empty()) meta.emplace_back("class_names", kv::join(ds.class_names, ","));
    if (!ds.provenance.empty()) meta.emplace_back("provenance", ds.provenance);
    kv::write_file(meta_path(path), meta, kStoreModule);
  }
}

/// Parses a VLE1 file of either payload precision into Scalar. Applies the
/// `.meta` sidecar when one exists; without it, n_groups is max(group) + 1.
template <typename Scalar = double>
EmbeddingDataset<Scalar> read_dataset(const std::string& path) {
  const auto bytes = detail::slurp(path, kStoreModule);
  detail::ByteReader r(bytes, path);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kDatasetMagic.data(), 4) != 0) {
    detail::fail(ErrorKind::kData, kStoreModule, "bad magic in " + path + " (expected VLE1)");
  }
  r.get<std::uint32_t>();  // magic
  const auto version = r.get<std::uint32_t>();
  detail::require(version == kDatasetVersion, ErrorKind::kData, kStoreModule,
                  "unsupported version " + std::to_string(version));
  const auto n = r.get<std::uint64_t>();
  const auto d_in = r.get<std::uint32_t>();
  const auto d_out = r.get<std::uint32_t>();
  const auto n_classes = r.get<std::uint32_t>();
  const auto flags = r.get<std::uint32_t>();
  detail::require((flags & ~(kFlagGroups | kFlagF64)) == 0, ErrorKind::kData, kStoreModule,
                  "unknown flag bits " + std::to_string(flags));
  detail::require(d_in > 0 && d_out > 0, ErrorKind::kData, kStoreModule, "zero dimension");

  const std::uint64_t scalar_bytes = (flags & kFlagF64) ? 8 : 4;
  const std::uint64_t expected = std::uint64_t{n_classes} * d_out * scalar_bytes +
                                 n * d_in * scalar_bytes + n * 4 +
                                 ((flags & kFlagGroups) ? n * 4 : 0);
  if (r.remaining() < expected) {
    detail::fail(ErrorKind::kData, kStoreModule,
                 "truncated payload in " + path + ": expected " + std::to_string(expected) +
                     " bytes after header, found " + std::to_string(r.remaining()));
  }
  detail::require(r.remaining() == expected, ErrorKind::kData, kStoreModule,
                  "trailing bytes after payload in " + path);

  EmbeddingDataset<Scalar> ds;
  if (flags & kFlagF64) {
    ds.anchors.rows = detail::get_matrix<double, Scalar>(r, n_classes, d_out, "anchors");
    ds.features = detail::get_matrix<double, Scalar>(r, n, d_in, "features");
  } else {
    ds.anchors.rows = detail::get_matrix<float, Scalar>(r, n_classes, d_out, "anchors");
    ds.features = detail::get_matrix<float, Scalar>(r, n, d_in, "features");
  }
  ds.labels.resize(n);
  for (auto& l : ds.labels) l = r.get<std::uint32_t>();
  if (flags & kFlagGroups) {
    std::vector<std::uint32_t> g(n);
    for (auto& x : g) x = r.get<std::uint32_t>();
    std::uint32_t max_g = 0;
    for (auto x : g) max_g = std::max(max_g, x + 1);
    ds.n_groups = max_g;
    ds.groups = std::move(g);
  }

  if (std::filesystem::exists(meta_path(path))) {
    for (const auto& e : kv::parse_file(meta_path(path), kStoreModule)) {
      if (e.key == "split") {
        ds.split = split_from_string(e.value);
      } else if (e.key == "n_groups") {
        ds.n_groups = static_cast<std::uint32_t>(kv::parse_uint(e.value, "n_groups", kStoreModule));
      } else if (e.key == "class_names") {
        ds.class_names = kv::split(e.value, ',');
      } else if (e.key == "provenance") {
        ds.provenance = e.value;
      }
    }
    if (!ds.groups) ds.n_groups = 0;
  }
  ds.validate();
  return ds;
}

/// Parameters of the desk-scale spurious-correlation benchmark.
///
/// Class y and spurious bit s map to group g = 2*y + s. The default group
/// sizes follow the Waterbirds train split (landbird/land 3498,
/// landbird/water 184, waterbird/land 56, waterbird/water 1057), i.e. a 95%
/// class/background correlation. Validation and test sizes follow the
/// standard Waterbirds val and test splits, which are group-balanced within
/// each class.
struct SyntheticSpec {
  std::array<std::size_t, 4> train_groups{3498, 184, 56, 1057};
  std::array<std::size_t, 4> val_groups{467, 466, 133, 133};
  std::array<std::size_t, 4> test_groups{2255, 2255, 642, 642};
  double core_separation = 1.0;
  double spurious_separation = 2.0;
  std::size_t d_in = 16;
  std::size_t d_out = 8;
  double noise_sigma = 0.3;
  std::uint64_t seed = 0;

  void validate() const {
    for (const auto* sizes : {&train_groups, &val_groups, &test_groups}) {
      for (auto n : *sizes) {
        detail::require(n >= 1, ErrorKind::kConfig, kStoreModule, "group sizes must be >= 1");
      }
    }
    detail::require(core_separation > 0 && std::isfinite(core_separation), ErrorKind::kConfig,
                    kStoreModule, "core_separation must be > 0");
    detail::require(spurious_separation >= 0 && std::isfinite(spurious_separation),
                    ErrorKind::kConfig, kStoreModule, "spurious_separation must be >= 0");
    detail::require(noise_sigma > 0 && std::isfinite(noise_sigma), ErrorKind::kConfig,
                    kStoreModule, "noise_sigma must be > 0");
    detail::require(d_in >= 2, ErrorKind::kConfig, kStoreModule,
                    "d_in must be >= 2 to host the class and spurious directions");
    detail::require(d_out >= 1, ErrorKind::kConfig, kStoreModule, "d_out must be >= 1");
  }
};

struct SyntheticSplits {
  EmbeddingDataset<double> train;
  EmbeddingDataset<double> val;
  EmbeddingDataset<double> test;
};

/// Input axis 0 carries the class signal (+-core_separation), axis 1 the
/// spurious signal (+-spurious_separation); every axis gets N(0, sigma^2)
/// noise. Anchors are the two class directions -e0 and +e0 restricted to
/// the first d_out coordinates.
inline SyntheticSplits generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng root = Rng(spec.seed).split(streams::kSynthetic);

  Matrix<double> anchor_rows = Matrix<double>::Zero(2, static_cast<Eigen::Index>(spec.d_out));
  anchor_rows(0, 0) = -1.0;
  anchor_rows(1, 0) = 1.0;
  const auto anchors = ClassAnchors<double>::from_rows(anchor_rows);

  auto make = [&](const std::array<std::size_t, 4>& sizes, SplitTag tag, std::uint64_t stream) {
    Rng rng = root.split(stream);
    std::size_t n = 0;
    for (auto s : sizes) n += s;
    std::vector<std::uint32_t> order_groups;
    order_groups.reserve(n);
    for (std::uint32_t g = 0; g < 4; ++g) order_groups.insert(order_groups.end(), sizes[g], g);
    rng.shuffle(order_groups);

    EmbeddingDataset<double> ds;
    ds.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(spec.d_in));
    ds.labels.resize(n);
    ds.groups = std::vector<std::uint32_t>(n);
    ds.n_groups = 4;
    ds.anchors = anchors;
    ds.split = tag;
    ds.class_names = {"class0", "class1"};
    ds.provenance = "synthetic seed=" + std::to_string(spec.seed);
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint32_t g = order_groups[i];
      const std::uint32_t y = g / 2;
      const std::uint32_t s = g % 2;
      auto row = ds.features.row(static_cast<Eigen::Index>(i));
      for (Eigen::Index k = 0; k < row.size(); ++k) row[k] = spec.noise_sigma * rng.normal();
      row[0] += (y == 1 ? 1.0 : -1.0) * spec.core_separation;
      row[1] += (s == 1 ? 1.0 : -1.0) * spec.spurious_separation;
      ds.labels[i] = y;
      (*ds.groups)[i] = g;
    }
    return ds;
  };

  return {make(spec.train_groups, SplitTag::kTrain, 0),
          make(spec.val_groups, SplitTag::kVal, 1),
          make(spec.test_groups, SplitTag::kTest, 2)};
}

}  // namespace recal

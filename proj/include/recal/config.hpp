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

// Experiment configuration: every tunable of the pipeline under one flat
// `key = value` namespace. Sources are applied in order (defaults, the
// RECAL_SEED environment variable, a config file, then flags), each later
// source overriding the earlier ones.

#include <array>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include "recal/calibration.hpp"
#include "recal/embedding_store.hpp"
#include "recal/error.hpp"
#include "recal/kv.hpp"
#include "recal/losses.hpp"
#include "recal/projection_head.hpp"
#include "recal/training.hpp"

namespace recal {

inline constexpr std::string_view kConfigModule = "config";
inline constexpr const char* kSeedEnv = "RECAL_SEED";

struct SweepConfig {
  SweepAxis axis = SweepAxis::kLambda;
  std::vector<double> values{0.1, 0.2, 0.5, 1.0, 2.0, 5.0};
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  SyntheticSpec synth;
  ClassifierConfig classifier;
  TrainConfig erm = default_erm();
  TrainConfig train;
  SweepConfig sweep;

  std::string data_train;
  std::string data_val;
  std::string data_test;
  std::string data_input;
  std::string head_init;
  std::string head_erm;
  std::string head_input;
  std::string out = ".";

  static TrainConfig default_erm() {
    TrainConfig c;
    c.lr = 1e-2;
    c.epochs = 2;
    return c;
  }

  /// The root seed propagated into every component.
  SyntheticSpec synthetic_spec() const {
    SyntheticSpec s = synth;
    s.seed = seed;
    return s;
  }
  TrainConfig erm_config() const {
    TrainConfig c = erm;
    c.seed = seed;
    return c;
  }
  TrainConfig train_config() const {
    TrainConfig c = train;
    c.seed = seed;
    return c;
  }

  void validate() const {
    synthetic_spec().validate();
    classifier.validate();
    erm_config().validate();
    train_config().validate();
    detail::require(!sweep.values.empty(), ErrorKind::kConfig, kConfigModule,
                    "sweep.values must not be empty");
  }
};

namespace detail {

struct Field {
  std::string key;
  std::string help;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, std::string_view)> set;
};

inline std::string groups_to_string(const std::array<std::size_t, 4>& g) {
  return kv::join(g, ",");
}

inline std::array<std::size_t, 4> groups_from_string(std::string_view s, std::string_view key) {
  const auto parts = kv::split(s, ',');
  require(parts.size() == 4, ErrorKind::kConfig, kConfigModule,
          std::string(key) + ": expected four comma-separated group sizes");
  std::array<std::size_t, 4> out{};
  for (std::size_t i = 0; i < 4; ++i) {
    out[i] = static_cast<std::size_t>(kv::parse_uint(parts[i], key, kConfigModule));
  }
  return out;
}

template <typename T>
Field real_field(std::string key, std::string help, T ExperimentConfig::*outer, double T::*member) {
  return {key, std::move(help),
          [=](const ExperimentConfig& c) { return kv::format_real(c.*outer.*member); },
          [=](ExperimentConfig& c, std::string_view v) {
            c.*outer.*member = kv::parse_real(v, key, kConfigModule);
          }};
}

template <typename T>
Field size_field(std::string key, std::string help, T ExperimentConfig::*outer,
                 std::size_t T::*member) {
  return {key, std::move(help),
          [=](const ExperimentConfig& c) { return std::to_string(c.*outer.*member); },
          [=](ExperimentConfig& c, std::string_view v) {
            c.*outer.*member = static_cast<std::size_t>(kv::parse_uint(v, key, kConfigModule));
          }};
}

template <typename T>
Field bool_field(std::string key, std::string help, T ExperimentConfig::*outer, bool T::*member) {
  return {key, std::move(help),
          [=](const ExperimentConfig& c) { return std::string(c.*outer.*member ? "true" : "false"); },
          [=](ExperimentConfig& c, std::string_view v) {
            c.*outer.*member = kv::parse_bool(v, key, kConfigModule);
          }};
}

inline Field path_field(std::string key, std::string help, std::string ExperimentConfig::*member) {
  return {std::move(key), std::move(help),
          [=](const ExperimentConfig& c) { return c.*member; },
          [=](ExperimentConfig& c, std::string_view v) { c.*member = std::string(v); }};
}

inline void add_train_fields(std::vector<Field>& f, const std::string& p,
                             TrainConfig ExperimentConfig::*t) {
  f.push_back(real_field(p + ".lr", "SGD learning rate", t, &TrainConfig::lr));
  f.push_back(real_field(p + ".momentum", "SGD momentum", t, &TrainConfig::momentum));
  f.push_back(real_field(p + ".weight_decay", "L2 weight decay", t, &TrainConfig::weight_decay));
  f.push_back(size_field(p + ".epochs", "number of epochs", t, &TrainConfig::epochs));
  f.push_back(size_field(p + ".eval_every", "validation stride in epochs", t,
                         &TrainConfig::eval_every));
}

}  // namespace detail

/// All config keys in canonical (echo) order.
inline const std::vector<detail::Field>& config_fields() {
  using detail::Field;
  static const std::vector<Field> fields = [] {
    using E = ExperimentConfig;
    std::vector<Field> f;
    f.push_back({"seed", "root seed for every random stream",
                 [](const E& c) { return std::to_string(c.seed); },
                 [](E& c, std::string_view v) { c.seed = kv::parse_uint(v, "seed", kConfigModule); }});

    for (auto [key, member] : {std::pair{"synth.train_groups", &SyntheticSpec::train_groups},
                               std::pair{"synth.val_groups", &SyntheticSpec::val_groups},
                               std::pair{"synth.test_groups", &SyntheticSpec::test_groups}}) {
      const std::string k = key;
      const auto field = member;
      f.push_back({k, "group sizes g0,g1,g2,g3 with g = 2*label + spurious",
                   [=](const E& c) { return detail::groups_to_string(c.synth.*field); },
                   [=](E& c, std::string_view v) {
                     c.synth.*field = detail::groups_from_string(v, k);
                   }});
    }
    f.push_back(detail::real_field("synth.core_separation", "class-signal magnitude", &E::synth,
                                   &SyntheticSpec::core_separation));
    f.push_back(detail::real_field("synth.spurious_separation", "spurious-signal magnitude",
                                   &E::synth, &SyntheticSpec::spurious_separation));
    f.push_back(detail::size_field("synth.d_in", "feature dimension", &E::synth,
                                   &SyntheticSpec::d_in));
    f.push_back(detail::size_field("synth.d_out", "embedding dimension", &E::synth,
                                   &SyntheticSpec::d_out));
    f.push_back(detail::real_field("synth.noise_sigma", "isotropic noise standard deviation",
                                   &E::synth, &SyntheticSpec::noise_sigma));

    f.push_back(detail::real_field("classifier.beta", "logit scale", &E::classifier,
                                   &ClassifierConfig::beta));
    f.push_back(detail::bool_field("classifier.normalize_output", "L2-normalize head outputs",
                                   &E::classifier, &ClassifierConfig::normalize_output));
    f.push_back(detail::bool_field("classifier.beta_in_erm", "scale ERM logits by beta",
                                   &E::classifier, &ClassifierConfig::beta_in_erm));

    detail::add_train_fields(f, "erm", &E::erm);
    f.push_back(detail::size_field("erm.batch", "minibatch size", &E::erm,
                                   &TrainConfig::anchor_batch));

    detail::add_train_fields(f, "train", &E::train);
    f.push_back(detail::size_field("train.anchor_batch", "anchors per step", &E::train,
                                   &TrainConfig::anchor_batch));
    f.push_back(detail::size_field("train.cs_batch", "cosine-loss batch size", &E::train,
                                   &TrainConfig::cs_batch));
    f.push_back(detail::real_field("train.ema_gamma", "centroid update coefficient", &E::train,
                                   &TrainConfig::ema_gamma));

    f.push_back({"sampler.positive_mode", "DPS, RPS or CENTROID_ONLY",
                 [](const E& c) { return std::string(to_string(c.train.sampler.positive_mode)); },
                 [](E& c, std::string_view v) {
                   c.train.sampler.positive_mode = positive_mode_from_string(v);
                 }});
    f.push_back({"sampler.negative_mode", "RNS or NNS",
                 [](const E& c) { return std::string(to_string(c.train.sampler.negative_mode)); },
                 [](E& c, std::string_view v) {
                   c.train.sampler.negative_mode = negative_mode_from_string(v);
                 }});
    for (auto [key, help, member] :
         {std::tuple{"sampler.p_size", "positives per anchor", &SamplerConfig::p_size},
          std::tuple{"sampler.n_size", "negatives per anchor", &SamplerConfig::n_size},
          std::tuple{"sampler.nns_candidate_size", "candidate draw for nearest negatives",
                     &SamplerConfig::nns_candidate_size}}) {
      const std::string k = key;
      const auto field = member;
      f.push_back({k, help, [=](const E& c) { return std::to_string(c.train.sampler.*field); },
                   [=](E& c, std::string_view v) {
                     c.train.sampler.*field =
                         static_cast<std::size_t>(kv::parse_uint(v, k, kConfigModule));
                   }});
    }

    for (auto [key, help, member] :
         {std::tuple{"loss.tau", "calibration-loss temperature", &LossConfig::tau},
          std::tuple{"loss.lambda", "calibration-loss weight", &LossConfig::lambda}}) {
      const std::string k = key;
      const auto field = member;
      f.push_back({k, help, [=](const E& c) { return kv::format_real(c.train.loss.*field); },
                   [=](E& c, std::string_view v) {
                     c.train.loss.*field = kv::parse_real(v, k, kConfigModule);
                   }});
    }
    f.push_back({"loss.holistic", "add the cosine-similarity loss",
                 [](const E& c) { return std::string(c.train.loss.holistic ? "true" : "false"); },
                 [](E& c, std::string_view v) {
                   c.train.loss.holistic = kv::parse_bool(v, "loss.holistic", kConfigModule);
                 }});

    f.push_back({"sweep.axis", "lambda, p_size or n_size",
                 [](const E& c) { return std::string(to_string(c.sweep.axis)); },
                 [](E& c, std::string_view v) { c.sweep.axis = sweep_axis_from_string(v); }});
    f.push_back({"sweep.values", "comma-separated values",
                 [](const E& c) {
                   std::vector<std::string> parts;
                   for (double x : c.sweep.values) parts.push_back(kv::format_real(x));
                   return kv::join(parts, ",");
                 },
                 [](E& c, std::string_view v) {
                   c.sweep.values.clear();
                   for (const auto& p : kv::split(v, ',')) {
                     c.sweep.values.push_back(kv::parse_real(p, "sweep.values", kConfigModule));
                   }
                 }});

    f.push_back(detail::path_field("data.train", "training split (VLE1)", &E::data_train));
    f.push_back(detail::path_field("data.val", "validation split (VLE1)", &E::data_val));
    f.push_back(detail::path_field("data.test", "test split (VLE1)", &E::data_test));
    f.push_back(detail::path_field("data.input", "dataset for eval and export (VLE1)",
                                   &E::data_input));
    f.push_back(detail::path_field("head.init", "initial head for ERM (PRJ1); seeded Gaussian if empty",
                                   &E::head_init));
    f.push_back(detail::path_field("head.erm", "ERM head (PRJ1)", &E::head_erm));
    f.push_back(detail::path_field("head.input", "head for eval and export (PRJ1)", &E::head_input));
    f.push_back(detail::path_field("out", "output directory (must exist)", &E::out));
    return f;
  }();
  return fields;
}

/// Sets one key; unknown keys are a config error.
inline void set_config_value(ExperimentConfig& cfg, std::string_view key, std::string_view value) {
  for (const auto& f : config_fields()) {
    if (f.key == key) {
      f.set(cfg, kv::trim(value));
      return;
    }
  }
  detail::fail(ErrorKind::kConfig, kConfigModule, "unknown config key '" + std::string(key) + "'");
}

inline std::string get_config_value(const ExperimentConfig& cfg, std::string_view key) {
  for (const auto& f : config_fields()) {
    if (f.key == key) return f.get(cfg);
  }
  detail::fail(ErrorKind::kConfig, kConfigModule, "unknown config key '" + std::string(key) + "'");
}

inline void apply_entries(ExperimentConfig& cfg, const std::vector<kv::Entry>& entries,
                          const std::string& source) {
  for (const auto& e : entries) {
    try {
      set_config_value(cfg, e.key, e.value);
    } catch (const Error& err) {
      detail::fail(err.kind(), kConfigModule,
                   source + ":" + std::to_string(e.line) + ": " + err.what());
    }
  }
}

inline void apply_config_file(ExperimentConfig& cfg, const std::string& path) {
  apply_entries(cfg, kv::parse_file(path, kConfigModule), path);
}

/// Applies RECAL_SEED when set.
inline void apply_environment(ExperimentConfig& cfg) {
  if (const char* s = std::getenv(kSeedEnv); s != nullptr && *s != '\0') {
    cfg.seed = kv::parse_uint(s, kSeedEnv, kConfigModule);
  }
}

inline std::vector<std::pair<std::string, std::string>> resolved_config(
    const ExperimentConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> kvs;
  for (const auto& f : config_fields()) kvs.emplace_back(f.key, f.get(cfg));
  return kvs;
}

}  // namespace recal

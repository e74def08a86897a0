/*
 * Copyright 2026 The ddag Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <optional>
#include <span>
#include <string>

#include <nlohmann/json.hpp>

#include "ddag/autograd.hpp"
#include "ddag/params.hpp"

namespace ddag {

// Ablation modes: baseline, + part attention, + graph attention, both.
enum class Mode { B, BP, BG, BPG };

std::string to_string(Mode mode);
Mode mode_from_string(const std::string& s);
inline bool uses_parts(Mode m) { return m == Mode::BP || m == Mode::BPG; }
inline bool uses_graph(Mode m) { return m == Mode::BG || m == Mode::BPG; }

inline constexpr double kDefaultMargin = 0.3;

// Bias-free identity classifier, shared by the identity and part losses.
struct Classifier {
  Var weight;  // (classes, C)

  Classifier() = default;
  Classifier(Index channels, int num_classes, Rng& rng);
  int num_classes() const { return static_cast<int>(weight.value().dim(0)); }
  void register_params(const std::string& prefix, ParamSet& out) const;
};

// Mean cross-entropy of classifier(BN(x^o)).
Var identity_loss(const Var& embedded, std::span<const int> labels, const Classifier& classifier);

// Batch-hard triplet loss with Euclidean distances: per anchor the farthest
// positive and the closest negative over the whole batch.
Var hard_triplet_loss(const Var& features, std::span<const int> labels, double margin = kDefaultMargin);

// Mean cross-entropy of classifier(x*), same classifier as identity_loss.
Var part_loss(const Var& aggregated, std::span<const int> labels, const Classifier& classifier);

// 1 / (1 + mean previous-epoch L_P); 0 when no previous epoch exists.
double dynamic_weight(std::optional<double> mean_part_loss_prev);

struct LossComponents {
  Var identity;
  Var triplet;
  std::optional<Var> part;
  std::optional<Var> graph;
};

// Per-step scalar summary. part_aggregate = baseline + part (the part term
// is absent, i.e. zero, in modes without part attention).
struct LossReport {
  int epoch = 0;
  int step = 0;
  double lr = 0.0;
  double identity = 0.0;
  double triplet = 0.0;
  double baseline = 0.0;
  std::optional<double> part;
  double part_aggregate = 0.0;
  std::optional<double> graph;
  double weight = 0.0;
  double total = 0.0;

  nlohmann::json to_json() const;
};

// Combines the components for `mode`; throws ContractError if one is missing.
Var total_loss(const LossComponents& components, Mode mode, double weight);
LossReport summarize(const LossComponents& components, Mode mode, double weight, const Var& total);

}  // namespace ddag

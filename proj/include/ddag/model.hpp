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
#include <vector>

#include <nlohmann/json.hpp>

#include "ddag/backbone.hpp"
#include "ddag/cgsa.hpp"
#include "ddag/iwpa.hpp"
#include "ddag/objectives.hpp"

namespace ddag {

struct ModelConfig {
  BackboneConfig backbone;
  Mode mode = Mode::BPG;
  int parts = 3;
  int heads = 4;
  int head_dim = 256;
  int num_classes = 2;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

struct ModelOutput {
  Var feature_map;
  GlobalFeature global;
  std::optional<PartAttentionState> parts;
  std::optional<GraphState> graph;
  // Test-time representation: x* with part attention, BN(x^o) otherwise.
  Var representation;
};

// Two-stream backbone, shared embedding BN, shared classifier, and the
// optional attention branches selected by the mode.
class DdagModel {
 public:
  DdagModel(const ModelConfig& config, Rng& rng);

  // `labels` are class indices; the graph branch runs only when training,
  // the mode includes it, and labels are given.
  ModelOutput forward(const Var& images, const std::vector<bool>& visible, std::span<const int> labels,
                      bool training);

  const ModelConfig& config() const { return config_; }
  ParamSet parameters();

  TwoStreamBackbone& backbone() { return backbone_; }
  EmbeddingBn& embedding() { return embedding_; }
  Classifier& classifier() { return classifier_; }
  std::optional<IwpaParams>& iwpa() { return iwpa_; }
  std::optional<CgsaParams>& cgsa() { return cgsa_; }

 private:
  ModelConfig config_;
  TwoStreamBackbone backbone_;
  EmbeddingBn embedding_;
  Classifier classifier_;
  std::optional<IwpaParams> iwpa_;
  std::optional<CgsaParams> cgsa_;
};

}  // namespace ddag

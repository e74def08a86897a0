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
#include "ddag/model.hpp"

#include "ddag/errors.hpp"

namespace ddag {

void ModelConfig::validate() const {
  backbone.validate();
  if (parts < 1) throw ConfigError("model.parts must be >= 1");
  if (heads < 1) throw ConfigError("model.heads must be >= 1");
  if (head_dim < 1) throw ConfigError("model.head_dim must be >= 1");
  if (num_classes < 2) throw ConfigError("model needs at least 2 training identities");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"variant", to_string(backbone.variant)},
          {"stage_channels", backbone.stage_channels},
          {"shared_from_stage", backbone.shared_from_stage},
          {"last_stage_stride", backbone.last_stage_stride},
          {"norm_groups", backbone.norm_groups},
          {"mode", to_string(mode)},
          {"parts", parts},
          {"heads", heads},
          {"head_dim", head_dim},
          {"num_classes", num_classes}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.backbone.variant = backbone_variant_from_string(j.at("variant").get<std::string>());
    c.backbone.stage_channels = j.at("stage_channels").get<std::vector<int>>();
    c.backbone.shared_from_stage = j.at("shared_from_stage").get<int>();
    c.backbone.last_stage_stride = j.at("last_stage_stride").get<int>();
    c.backbone.norm_groups = j.at("norm_groups").get<int>();
    c.mode = mode_from_string(j.at("mode").get<std::string>());
    c.parts = j.at("parts").get<int>();
    c.heads = j.at("heads").get<int>();
    c.head_dim = j.at("head_dim").get<int>();
    c.num_classes = j.at("num_classes").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw ModelError(std::string("malformed model config: ") + e.what());
  }
  c.validate();
  return c;
}

DdagModel::DdagModel(const ModelConfig& config, Rng& rng)
    : config_(config),
      backbone_((config.validate(), config.backbone), rng),
      embedding_(config.backbone.feature_dim()),
      classifier_(config.backbone.feature_dim(), config.num_classes, rng) {
  const Index c = config.backbone.feature_dim();
  if (uses_parts(config.mode)) iwpa_.emplace(c, config.parts, rng);
  if (uses_graph(config.mode)) cgsa_.emplace(c, config.heads, config.head_dim, config.num_classes, rng);
}

ModelOutput DdagModel::forward(const Var& images, const std::vector<bool>& visible, std::span<const int> labels,
                               bool training) {
  ModelOutput out;
  out.feature_map = backbone_.forward(images, visible);
  out.global = pool_and_embed(out.feature_map, embedding_, training);
  out.representation = out.global.embedded;
  if (iwpa_) {
    out.parts = iwpa_forward(out.feature_map, out.global.embedded, *iwpa_);
    out.representation = out.parts->aggregated;
  }
  if (cgsa_ && training && !labels.empty()) out.graph = cgsa_forward(out.global.pooled, labels, *cgsa_);
  return out;
}

ParamSet DdagModel::parameters() {
  ParamSet set;
  backbone_.register_params(set);
  embedding_.register_params("embedding_bn", set);
  classifier_.register_params("classifier", set);
  if (iwpa_) iwpa_->register_params("iwpa", set);
  if (cgsa_) cgsa_->register_params("cgsa", set);
  return set;
}

}  // namespace ddag

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

#include <string>
#include <vector>

#include "ddag/autograd.hpp"
#include "ddag/datagen.hpp"
#include "ddag/params.hpp"

namespace ddag {

enum class BackboneVariant { toy, resnet50_adapter };

std::string to_string(BackboneVariant v);
BackboneVariant backbone_variant_from_string(const std::string& s);

// Layer table of the toy variant, stage s = 0..S-1:
//   conv 3x3 (pad 1, stride 2; stride 1 for the last stage)
//   -> group norm (norm_groups groups, or 1 if channels are not divisible)
//   -> ReLU
// Stages below shared_from_stage exist once per modality.
struct BackboneConfig {
  BackboneVariant variant = BackboneVariant::toy;
  std::vector<int> stage_channels{16, 32, 64, 128};
  int shared_from_stage = 1;
  int last_stage_stride = 1;
  int input_channels = 3;
  int norm_groups = 4;

  int feature_dim() const { return stage_channels.back(); }
  void validate() const;
};

struct FeatureSize {
  Index height = 0;
  Index width = 0;
  bool operator==(const FeatureSize&) const = default;
};

// Spatial size of the last-stage feature map for an input of h x w. For the
// ResNet50 adapter this follows the standard stem (7x7/2 conv, 3x3/2 max
// pool) and stage strides 1,2,2,last_stage_stride.
FeatureSize feature_map_size(const BackboneConfig& config, Index height, Index width);

// Converts a loaded (C,H,W) image in [0,1] to the 3-channel network input:
// infrared is replicated across channels, then (x - 0.5) / 0.25.
Tensor to_network_input(const Tensor& image);

struct ConvStage {
  Var weight;
  Var bias;
  Var gamma;
  Var beta;
  int stride = 1;
  int groups = 1;

  Var forward(const Var& x) const;
  void register_params(const std::string& prefix, ParamSet& out) const;
};

class TwoStreamBackbone {
 public:
  TwoStreamBackbone() = default;
  TwoStreamBackbone(const BackboneConfig& config, Rng& rng);

  // images: (K,3,H,W). Samples with visible[k] take the visible stage-0
  // branch, the rest the infrared branch; all share the deeper stages.
  // Output order equals input order.
  Var forward(const Var& images, const std::vector<bool>& visible) const;

  void register_params(ParamSet& out) const;
  const BackboneConfig& config() const { return config_; }

  std::vector<ConvStage>& visible_stages() { return visible_; }
  std::vector<ConvStage>& infrared_stages() { return infrared_; }
  std::vector<ConvStage>& shared_stages() { return shared_; }

 private:
  BackboneConfig config_;
  std::vector<ConvStage> visible_;
  std::vector<ConvStage> infrared_;
  std::vector<ConvStage> shared_;
};

// Shared embedding batch norm BN(x^o). Also serves as the residual branch
// of the weighted-part aggregation.
struct EmbeddingBn {
  Var gamma;
  Var beta;
  Tensor running_mean;
  Tensor running_var;

  explicit EmbeddingBn(Index channels = 0);
  void register_params(const std::string& prefix, ParamSet& out);
};

struct GlobalFeature {
  Var pooled;    // x^o, (K,C)
  Var embedded;  // BN(x^o), (K,C)
};

GlobalFeature pool_and_embed(const Var& feature_map, EmbeddingBn& bn, bool training);

}  // namespace ddag

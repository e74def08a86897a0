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
#include "ddag/backbone.hpp"

#include <algorithm>
#include <cmath>

#include "ddag/errors.hpp"
#include "ddag/ops.hpp"

namespace ddag {

std::string to_string(BackboneVariant v) { return v == BackboneVariant::toy ? "toy" : "resnet50-adapter"; }

BackboneVariant backbone_variant_from_string(const std::string& s) {
  if (s == "toy") return BackboneVariant::toy;
  if (s == "resnet50-adapter") return BackboneVariant::resnet50_adapter;
  throw ConfigError("unknown backbone variant '" + s + "' (expected toy or resnet50-adapter)");
}

void BackboneConfig::validate() const {
  if (stage_channels.empty()) throw ConfigError("model.stage_channels must not be empty");
  for (int c : stage_channels)
    if (c < 1) throw ConfigError("model.stage_channels entries must be positive");
  if (shared_from_stage < 1) throw ConfigError("model.shared_from_stage must be >= 1 (stage 0 is modality-specific)");
  if (shared_from_stage > static_cast<int>(stage_channels.size()))
    throw ConfigError("model.shared_from_stage exceeds the number of stages");
  if (last_stage_stride != 1) throw ConfigError("model.last_stage_stride must be 1");
  if (input_channels != 3) throw ConfigError("backbone input is always 3 channels");
  if (norm_groups < 1) throw ConfigError("model.norm_groups must be >= 1");
  if (variant == BackboneVariant::resnet50_adapter && stage_channels.size() != 4)
    throw ConfigError("resnet50-adapter has exactly 4 stages");
}

namespace {

Index conv_out(Index size, Index kernel, Index stride, Index pad) { return (size + 2 * pad - kernel) / stride + 1; }

int groups_for(int channels, int wanted) { return channels % wanted == 0 ? wanted : 1; }

}  // namespace

FeatureSize feature_map_size(const BackboneConfig& config, Index height, Index width) {
  config.validate();
  FeatureSize s{height, width};
  if (config.variant == BackboneVariant::toy) {
    const auto stages = config.stage_channels.size();
    for (std::size_t i = 0; i < stages; ++i) {
      const Index stride = i + 1 == stages ? config.last_stage_stride : 2;
      s = {conv_out(s.height, 3, stride, 1), conv_out(s.width, 3, stride, 1)};
    }
    return s;
  }
  s = {conv_out(s.height, 7, 2, 3), conv_out(s.width, 7, 2, 3)};  // stem conv
  s = {conv_out(s.height, 3, 2, 1), conv_out(s.width, 3, 2, 1)};  // max pool
  for (Index stride : {Index{1}, Index{2}, Index{2}, Index{config.last_stage_stride}})
    s = {conv_out(s.height, 1, stride, 0), conv_out(s.width, 1, stride, 0)};
  return s;
}

Tensor to_network_input(const Tensor& image) {
  if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3))
    throw ContractError("to_network_input: expected (1|3,H,W), got " + shape_str(image.shape()));
  const Index h = image.dim(1), w = image.dim(2), plane = h * w;
  Tensor out({3, h, w});
  for (Index c = 0; c < 3; ++c) {
    const double* src = image.data() + (image.dim(0) == 3 ? c : 0) * plane;
    double* dst = out.data() + c * plane;
    for (Index i = 0; i < plane; ++i) dst[i] = (src[i] - 0.5) / 0.25;
  }
  return out;
}

Var ConvStage::forward(const Var& x) const {
  return ops::relu(ops::group_norm(ops::conv2d(x, weight, bias, stride, 1), gamma, beta, groups));
}

void ConvStage::register_params(const std::string& prefix, ParamSet& out) const {
  out.add(prefix + ".conv.weight", weight);
  out.add(prefix + ".conv.bias", bias);
  out.add(prefix + ".norm.gamma", gamma);
  out.add(prefix + ".norm.beta", beta);
}

namespace {

ConvStage make_stage(int cin, int cout, int stride, int norm_groups, Rng& rng) {
  ConvStage s;
  const double fan_in = static_cast<double>(cin) * 9.0;
  s.weight = normal_param({cout, cin, 3, 3}, std::sqrt(2.0 / fan_in), rng);
  s.bias = constant_param({cout}, 0.0);
  s.gamma = constant_param({cout}, 1.0);
  s.beta = constant_param({cout}, 0.0);
  s.stride = stride;
  s.groups = groups_for(cout, norm_groups);
  return s;
}

}  // namespace

TwoStreamBackbone::TwoStreamBackbone(const BackboneConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  if (config_.variant == BackboneVariant::resnet50_adapter) return;  // shape contract only
  const auto stages = config_.stage_channels.size();
  int cin = config_.input_channels;
  for (std::size_t i = 0; i < stages; ++i) {
    const int cout = config_.stage_channels[i];
    const int stride = i + 1 == stages ? config_.last_stage_stride : 2;
    if (static_cast<int>(i) < config_.shared_from_stage) {
      visible_.push_back(make_stage(cin, cout, stride, config_.norm_groups, rng));
      infrared_.push_back(make_stage(cin, cout, stride, config_.norm_groups, rng));
    } else {
      shared_.push_back(make_stage(cin, cout, stride, config_.norm_groups, rng));
    }
    cin = cout;
  }
}

Var TwoStreamBackbone::forward(const Var& images, const std::vector<bool>& visible) const {
  if (config_.variant == BackboneVariant::resnet50_adapter)
    throw ModelError("resnet50-adapter defines shapes only; pretrained weights are not shipped");
  if (images.value().rank() != 4 || images.value().dim(1) != config_.input_channels)
    throw ModelError("backbone expects (K,3,H,W) input, got " + shape_str(images.shape()));
  const Index k = images.value().dim(0);
  if (static_cast<Index>(visible.size()) != k) throw ModelError("modality mask length differs from batch size");

  std::vector<Index> vis_rows, ir_rows;
  for (Index i = 0; i < k; ++i) (visible[static_cast<std::size_t>(i)] ? vis_rows : ir_rows).push_back(i);

  std::vector<Var> pieces;
  std::vector<std::vector<Index>> positions;
  auto run_branch = [&](const std::vector<ConvStage>& stages, const std::vector<Index>& rows) {
    if (rows.empty()) return;
    Var x = ops::index_rows(images, rows);
    for (const auto& s : stages) x = s.forward(x);
    pieces.push_back(x);
    positions.push_back(rows);
  };
  run_branch(visible_, vis_rows);
  run_branch(infrared_, ir_rows);

  Var x = pieces.size() == 1 && positions[0].size() == static_cast<std::size_t>(k) &&
                  std::is_sorted(positions[0].begin(), positions[0].end())
              ? pieces[0]
              : ops::merge_rows(pieces, positions, k);
  for (const auto& s : shared_) x = s.forward(x);
  if (!x.value().all_finite()) throw NumericalError("backbone produced non-finite features");
  return x;
}

void TwoStreamBackbone::register_params(ParamSet& out) const {
  for (std::size_t i = 0; i < visible_.size(); ++i) {
    visible_[i].register_params("backbone.visible.stage" + std::to_string(i), out);
    infrared_[i].register_params("backbone.infrared.stage" + std::to_string(i), out);
  }
  for (std::size_t i = 0; i < shared_.size(); ++i)
    shared_[i].register_params("backbone.shared.stage" + std::to_string(i + visible_.size()), out);
}

EmbeddingBn::EmbeddingBn(Index channels)
    : gamma(constant_param({channels}, 1.0)),
      beta(constant_param({channels}, 0.0)),
      running_mean(Shape{channels}, 0.0),
      running_var(Shape{channels}, 1.0) {}

void EmbeddingBn::register_params(const std::string& prefix, ParamSet& out) {
  out.add(prefix + ".gamma", gamma);
  out.add(prefix + ".beta", beta);
  out.add_buffer(prefix + ".running_mean", &running_mean);
  out.add_buffer(prefix + ".running_var", &running_var);
}

GlobalFeature pool_and_embed(const Var& feature_map, EmbeddingBn& bn, bool training) {
  if (feature_map.value().rank() != 4 || feature_map.value().dim(2) < 1 || feature_map.value().dim(3) < 1)
    throw ModelError("pool_and_embed expects a (K,C,H,W) feature map with H,W >= 1");
  GlobalFeature g;
  g.pooled = ops::global_avg_pool(feature_map);
  g.embedded = ops::batch_norm(g.pooled, bn.gamma, bn.beta, bn.running_mean, bn.running_var, training);
  return g;
}

}  // namespace ddag

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
#include "ddag/cgsa.hpp"

#include <cmath>

#include "ddag/errors.hpp"
#include "ddag/ops.hpp"

namespace ddag {

GraphHead::GraphHead(Index in_dim, Index out_dim, Rng& rng) {
  if (in_dim < 1 || out_dim < 1) throw ConfigError("graph head dimensions must be positive");
  // Glorot-style scales.
  projection = normal_param({out_dim, in_dim}, std::sqrt(2.0 / static_cast<double>(in_dim + out_dim)), rng);
  weighting = normal_param({2 * out_dim}, std::sqrt(2.0 / static_cast<double>(2 * out_dim + 1)), rng);
}

void GraphHead::register_params(const std::string& prefix, ParamSet& out) const {
  out.add(prefix + ".projection", projection);
  out.add(prefix + ".weighting", weighting);
}

CgsaParams::CgsaParams(Index channels, int num_heads, int head_dim, int num_classes, Rng& rng) {
  if (num_heads < 1) throw ConfigError("model.heads must be >= 1");
  if (head_dim < 1) throw ConfigError("model.head_dim must be >= 1");
  if (num_classes < 2) throw ConfigError("graph classifier needs at least 2 classes");
  for (int l = 0; l < num_heads; ++l) heads.emplace_back(channels, head_dim, rng);
  output = GraphHead(static_cast<Index>(num_heads) * head_dim, num_classes, rng);
}

void CgsaParams::register_params(const std::string& prefix, ParamSet& out) const {
  for (std::size_t l = 0; l < heads.size(); ++l) heads[l].register_params(prefix + ".head" + std::to_string(l), out);
  output.register_params(prefix + ".output", out);
}

Tensor build_graph(std::span<const int> labels) {
  const auto k = static_cast<Index>(labels.size());
  if (k < 1) throw ContractError("build_graph: empty batch");
  Tensor a({k, k});
  for (Index i = 0; i < k; ++i)
    for (Index j = 0; j < k; ++j) a.at(i, j) = labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(j)] ? 1.0 : 0.0;
  return a;
}

namespace {

void check_graph_inputs(const Var& nodes, const Tensor& adjacency) {
  if (nodes.value().rank() != 2) throw ModelError("graph nodes must be (K,C)");
  const Index k = nodes.value().dim(0);
  if (adjacency.shape() != Shape{k, k}) throw ModelError("adjacency must be (K,K)");
  if (!nodes.value().all_finite()) throw NumericalError("graph node features are not finite");
  for (Index i = 0; i < k; ++i)
    if (!(adjacency.at(i, i) > 0.0)) throw ContractError("adjacency row " + std::to_string(i) + " lacks a self-loop");
}

struct HeadResult {
  Var projected;
  Var coeffs;
};

HeadResult run_head(const Var& nodes, const Tensor& adjacency, const GraphHead& head) {
  const Index d = head.out_dim();
  HeadResult r;
  r.projected = ops::linear(nodes, head.projection);
  Var scores = ops::linear(r.projected, ops::reshape(head.weighting, {2, d}));
  Var pair = ops::outer_sum(ops::slice_cols(scores, 0, 1), ops::slice_cols(scores, 1, 2));
  r.coeffs = ops::masked_softmax_rows(ops::leaky_relu(pair, kGraphLeakySlope), adjacency);
  return r;
}

}  // namespace

Var graph_attention_coeffs(const Var& nodes, const Tensor& adjacency, const GraphHead& head) {
  check_graph_inputs(nodes, adjacency);
  return run_head(nodes, adjacency, head).coeffs;
}

Var multi_head_aggregate(const Var& nodes, const Tensor& adjacency, const CgsaParams& params) {
  check_graph_inputs(nodes, adjacency);
  std::vector<Var> outs;
  for (const auto& head : params.heads) {
    auto r = run_head(nodes, adjacency, head);
    outs.push_back(ops::matmul(r.coeffs, r.projected));
  }
  return ops::elu(ops::concat_cols(outs), 1.0);
}

Var graph_head_forward(const Var& node_features, const Tensor& adjacency, const CgsaParams& params) {
  check_graph_inputs(node_features, adjacency);
  auto r = run_head(node_features, adjacency, params.output);
  return ops::matmul(r.coeffs, r.projected);
}

Var graph_loss(const Var& output_nodes, std::span<const int> labels) { return ops::cross_entropy(output_nodes, labels); }

GraphState cgsa_forward(const Var& nodes, std::span<const int> labels, const CgsaParams& params) {
  GraphState s;
  s.adjacency = build_graph(labels);
  check_graph_inputs(nodes, s.adjacency);
  std::vector<Var> outs;
  for (const auto& head : params.heads) {
    auto r = run_head(nodes, s.adjacency, head);
    s.coeffs.push_back(r.coeffs);
    outs.push_back(ops::matmul(r.coeffs, r.projected));
  }
  s.node_features = ops::elu(ops::concat_cols(outs), 1.0);
  auto out = run_head(s.node_features, s.adjacency, params.output);
  s.output_coeffs = out.coeffs;
  s.output_nodes = ops::matmul(out.coeffs, out.projected);
  return s;
}

}  // namespace ddag

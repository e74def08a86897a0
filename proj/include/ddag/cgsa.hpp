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

#include <span>
#include <string>
#include <vector>

#include "ddag/autograd.hpp"
#include "ddag/params.hpp"

namespace ddag {

inline constexpr double kGraphLeakySlope = 0.2;

// One graph attention head: projection h (out_dim, in_dim) and the weighting
// vector w of length 2*out_dim, whose first half scores the receiving node
// and second half the neighbour.
struct GraphHead {
  Var projection;
  Var weighting;

  GraphHead() = default;
  GraphHead(Index in_dim, Index out_dim, Rng& rng);
  Index out_dim() const { return projection.value().dim(0); }
  void register_params(const std::string& prefix, ParamSet& out) const;
};

struct CgsaParams {
  std::vector<GraphHead> heads;  // L heads mapping C -> d
  GraphHead output;              // one head mapping L*d -> number of classes

  CgsaParams() = default;
  CgsaParams(Index channels, int heads, int head_dim, int num_classes, Rng& rng);
  void register_params(const std::string& prefix, ParamSet& out) const;
};

struct GraphState {
  Tensor adjacency;          // (K,K) binary
  std::vector<Var> coeffs;   // per head (K,K)
  Var node_features;         // (K, L*d), ELU applied
  Var output_coeffs;         // (K,K) of the output layer
  Var output_nodes;          // (K, classes)
};

// A[i,j] = 1 iff labels[i] == labels[j]; the diagonal is therefore 1.
Tensor build_graph(std::span<const int> labels);

// Masked row softmax of LeakyReLU([h x_i || h x_j] . w) over neighbours.
Var graph_attention_coeffs(const Var& nodes, const Tensor& adjacency, const GraphHead& head);
// ELU(concat_l sum_j alpha^l[i,j] h^l(x_j)).
Var multi_head_aggregate(const Var& nodes, const Tensor& adjacency, const CgsaParams& params);
// One-head layer without activation; returns class logits per node.
Var graph_head_forward(const Var& node_features, const Tensor& adjacency, const CgsaParams& params);
// Mean over nodes of -log softmax(x_i)[label_i].
Var graph_loss(const Var& output_nodes, std::span<const int> labels);

GraphState cgsa_forward(const Var& nodes, std::span<const int> labels, const CgsaParams& params);

}  // namespace ddag

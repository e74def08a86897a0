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
#include <vector>

#include "ddag/autograd.hpp"

// Differentiable tensor operations. Every op validates shapes and throws
// ContractError on mismatch.
namespace ddag::ops {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var sum(const Var& a);
Var mean(const Var& a);
Var reshape(const Var& a, Shape shape);

Var relu(const Var& a);
Var leaky_relu(const Var& a, double negative_slope);
Var elu(const Var& a, double alpha = 1.0);

// a: (M,K) times b: (K,N).
Var matmul(const Var& a, const Var& b);
// x: (N,in), weight: (out,in) -> (N,out).
Var linear(const Var& x, const Var& weight);
Var linear(const Var& x, const Var& weight, const Var& bias);
// Batched products over the leading axis: (B,M,K)x(B,K,N) and (B,M,K)x(B,N,K)^T.
Var bmm(const Var& a, const Var& b);
Var bmm_nt(const Var& a, const Var& b);

// Softmax over the last axis, max-subtracted.
Var softmax_rows(const Var& x);
// Row softmax of a (R,C) matrix restricted to entries where mask > 0. Entries
// outside the mask are exactly zero. Every row must have a masked entry.
Var masked_softmax_rows(const Var& x, const Tensor& mask);
// s, t with K elements each -> (K,K) with out[i,j] = s[i] + t[j].
Var outer_sum(const Var& s, const Var& t);
Var slice_cols(const Var& x, Index begin, Index end);
Var concat_cols(const std::vector<Var>& parts);
// x: (N,P,C), w: (P) -> (N,C) with out[n] = sum_i w[i] x[n,i].
Var weighted_part_sum(const Var& x, const Var& w);

// Mean cross-entropy of logits (N,C) against integer labels in [0,C).
Var cross_entropy(const Var& logits, std::span<const int> labels);

// x: (N,Cin,H,W), weight: (Cout,Cin,k,k), bias: (Cout).
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);
// Per-sample normalization over channel groups; independent of batch size.
Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps = 1e-5);
// Batch normalization of (N,C) features. Training mode normalizes with the
// batch statistics and updates the running buffers; eval mode uses them.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean,
               Tensor& running_var, bool training, double momentum = 0.1, double eps = 1e-5);
// (N,C,H,W) -> (N,C) spatial mean.
Var global_avg_pool(const Var& x);
// (N,C,H,W) -> (N,P,C): mean over P contiguous horizontal stripes; the
// first H mod P stripes get one extra row.
Var stripe_pool(const Var& x, int parts);
std::vector<Index> stripe_heights(Index height, int parts);

// Gather rows along axis 0.
Var index_rows(const Var& x, std::span<const Index> rows);
// Inverse of a partition: pieces[k] row r lands at positions[k][r].
Var merge_rows(const std::vector<Var>& pieces, const std::vector<std::vector<Index>>& positions,
               Index total_rows);

}  // namespace ddag::ops

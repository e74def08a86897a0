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

#include "ddag/autograd.hpp"
#include "ddag/params.hpp"

namespace ddag {

// Learnable state of the weighted-part attention block for C channels and
// p parts. u and v project to C/2; z keeps C so its output can be summed
// with the BN residual.
struct IwpaParams {
  Var w_u;           // (C/2, C)
  Var w_v;           // (C/2, C)
  Var w_z;           // (C, C)
  Var part_weights;  // (p), zero at initialization

  IwpaParams() = default;
  IwpaParams(Index channels, int parts, Rng& rng);

  Index channels() const { return w_z.value().dim(0); }
  int parts() const { return static_cast<int>(part_weights.value().numel()); }
  void register_params(const std::string& prefix, ParamSet& out) const;
};

struct PartAttentionState {
  Var parts;       // (K,p,C) region-pooled part features
  Var logits;      // (K,p,p) u_i . v_j
  Var alpha;       // (K,p,p) row-stochastic
  Var attended;    // (K,p,C)
  Var aggregated;  // (K,C) x*
};

// (K,C,H,W) -> (K,p,C). Throws ConfigError when H < p.
Var extract_parts(const Var& feature_map, int parts);

// Raw logits u(x_i)^T v(x_j); throws NumericalError naming the first
// non-finite entry.
Var part_logits(const Var& parts, const IwpaParams& params);
// Row softmax of the part logits, max-subtracted.
Var part_attention(const Var& parts, const IwpaParams& params);
// x̄_i = sum_j alpha[i,j] z(x_j).
Var attend_parts(const Var& alpha, const Var& parts, const IwpaParams& params);
// x* = BN(x^o) + sum_i w_i x̄_i; `embedded` is the already normalized BN(x^o).
Var rbn_aggregate(const Var& embedded, const Var& attended, const IwpaParams& params);

PartAttentionState iwpa_forward(const Var& feature_map, const Var& embedded, const IwpaParams& params);

}  // namespace ddag

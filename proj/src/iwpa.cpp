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
#include "ddag/iwpa.hpp"

#include <cmath>

#include "ddag/errors.hpp"
#include "ddag/ops.hpp"

namespace ddag {

IwpaParams::IwpaParams(Index channels, int parts, Rng& rng) {
  if (channels < 2) throw ConfigError("part attention needs at least 2 feature channels");
  if (parts < 1) throw ConfigError("model.parts must be >= 1");
  const double scale = 1.0 / std::sqrt(static_cast<double>(channels));
  w_u = normal_param({channels / 2, channels}, scale, rng);
  w_v = normal_param({channels / 2, channels}, scale, rng);
  w_z = normal_param({channels, channels}, scale, rng);
  part_weights = constant_param({parts}, 0.0);
}

void IwpaParams::register_params(const std::string& prefix, ParamSet& out) const {
  out.add(prefix + ".w_u", w_u);
  out.add(prefix + ".w_v", w_v);
  out.add(prefix + ".w_z", w_z);
  out.add(prefix + ".part_weights", part_weights);
}

Var extract_parts(const Var& feature_map, int parts) { return ops::stripe_pool(feature_map, parts); }

namespace {

// Applies a (out,C) map to every part of a (K,p,C) tensor.
Var per_part_linear(const Var& parts, const Var& weight) {
  const Index k = parts.value().dim(0), p = parts.value().dim(1), c = parts.value().dim(2);
  if (weight.value().dim(1) != c)
    throw ModelError("part features have " + std::to_string(c) + " channels, attention expects " +
                     std::to_string(weight.value().dim(1)));
  Var flat = ops::reshape(parts, {k * p, c});
  return ops::reshape(ops::linear(flat, weight), {k, p, weight.value().dim(0)});
}

}  // namespace

Var part_logits(const Var& parts, const IwpaParams& params) {
  if (parts.value().rank() != 3) throw ModelError("part features must be (K,p,C)");
  Var logits = ops::bmm_nt(per_part_linear(parts, params.w_u), per_part_linear(parts, params.w_v));
  const Tensor& l = logits.value();
  for (Index i = 0; i < l.numel(); ++i)
    if (!std::isfinite(l[i])) {
      const Index p = l.dim(1);
      throw NumericalError("non-finite part attention logit at sample " + std::to_string(i / (p * p)) + ", parts (" +
                           std::to_string((i / p) % p) + "," + std::to_string(i % p) + ")");
    }
  return logits;
}

Var part_attention(const Var& parts, const IwpaParams& params) {
  return ops::softmax_rows(part_logits(parts, params));
}

Var attend_parts(const Var& alpha, const Var& parts, const IwpaParams& params) {
  return ops::bmm(alpha, per_part_linear(parts, params.w_z));
}

Var rbn_aggregate(const Var& embedded, const Var& attended, const IwpaParams& params) {
  return ops::add(embedded, ops::weighted_part_sum(attended, params.part_weights));
}

PartAttentionState iwpa_forward(const Var& feature_map, const Var& embedded, const IwpaParams& params) {
  PartAttentionState s;
  s.parts = extract_parts(feature_map, params.parts());
  s.logits = part_logits(s.parts, params);
  s.alpha = ops::softmax_rows(s.logits);
  s.attended = attend_parts(s.alpha, s.parts, params);
  s.aggregated = rbn_aggregate(embedded, s.attended, params);
  return s;
}

}  // namespace ddag

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
#include "ddag/objectives.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <vector>

#include "ddag/errors.hpp"
#include "ddag/ops.hpp"

namespace ddag {

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::B: return "B";
    case Mode::BP: return "B+P";
    case Mode::BG: return "B+G";
    case Mode::BPG: return "B+P+G";
  }
  return "?";
}

Mode mode_from_string(const std::string& s) {
  if (s == "B") return Mode::B;
  if (s == "B+P") return Mode::BP;
  if (s == "B+G") return Mode::BG;
  if (s == "B+P+G") return Mode::BPG;
  throw ConfigError("unknown mode '" + s + "' (expected B, B+P, B+G or B+P+G)");
}

Classifier::Classifier(Index channels, int num_classes, Rng& rng) {
  if (num_classes < 2) throw ConfigError("classifier needs at least 2 classes");
  weight = normal_param({num_classes, channels}, 0.001, rng);
}

void Classifier::register_params(const std::string& prefix, ParamSet& out) const { out.add(prefix + ".weight", weight); }

Var identity_loss(const Var& embedded, std::span<const int> labels, const Classifier& classifier) {
  return ops::cross_entropy(ops::linear(embedded, classifier.weight), labels);
}

Var part_loss(const Var& aggregated, std::span<const int> labels, const Classifier& classifier) {
  return ops::cross_entropy(ops::linear(aggregated, classifier.weight), labels);
}

Var hard_triplet_loss(const Var& features, std::span<const int> labels, double margin) {
  if (features.value().rank() != 2) throw ContractError("triplet loss expects (K,C) features");
  const Index k = features.value().dim(0), c = features.value().dim(1);
  if (static_cast<Index>(labels.size()) != k) throw ContractError("triplet loss: label count differs from batch");
  std::map<int, int> counts;
  for (int y : labels) ++counts[y];
  for (const auto& [y, n] : counts) {
    if (n < 2) throw ContractError("triplet loss: label " + std::to_string(y) + " has no positive partner");
    if (n == k) throw ContractError("triplet loss: label " + std::to_string(y) + " has no negative");
  }

  const Tensor& f = features.value();
  Tensor dist({k, k});
  for (Index i = 0; i < k; ++i)
    for (Index j = i + 1; j < k; ++j) {
      double s = 0.0;
      for (Index q = 0; q < c; ++q) {
        const double d = f.at(i, q) - f.at(j, q);
        s += d * d;
      }
      dist.at(i, j) = dist.at(j, i) = std::sqrt(std::max(s, 1e-12));
    }

  struct Term {
    Index anchor, pos, neg;
  };
  std::vector<Term> active;
  double loss = 0.0;
  for (Index a = 0; a < k; ++a) {
    Index pos = -1, neg = -1;
    for (Index j = 0; j < k; ++j) {
      if (j == a) continue;
      if (labels[static_cast<std::size_t>(j)] == labels[static_cast<std::size_t>(a)]) {
        if (pos < 0 || dist.at(a, j) > dist.at(a, pos)) pos = j;
      } else if (neg < 0 || dist.at(a, j) < dist.at(a, neg)) {
        neg = j;
      }
    }
    const double term = dist.at(a, pos) - dist.at(a, neg) + margin;
    if (term > 0.0) {
      loss += term;
      active.push_back({a, pos, neg});
    }
  }
  loss /= static_cast<double>(k);

  return Var::make(Tensor::scalar(loss), {features},
                   [active = std::move(active), dist = std::move(dist), k, c](Node& n) {
                     const Tensor& fv = n.inputs[0]->value;
                     Tensor g(fv.shape());
                     const double s = n.grad[0] / static_cast<double>(k);
                     // d||fa - fb|| / dfa = (fa - fb) / ||fa - fb||
                     auto push = [&](Index a, Index b, double sign) {
                       const double inv = sign * s / dist.at(a, b);
                       for (Index q = 0; q < c; ++q) {
                         const double d = (fv.at(a, q) - fv.at(b, q)) * inv;
                         g.at(a, q) += d;
                         g.at(b, q) -= d;
                       }
                     };
                     for (const auto& t : active) {
                       push(t.anchor, t.pos, 1.0);
                       push(t.anchor, t.neg, -1.0);
                     }
                     n.inputs[0]->accumulate(g);
                   });
}

double dynamic_weight(std::optional<double> mean_part_loss_prev) {
  if (!mean_part_loss_prev) return 0.0;
  if (!(*mean_part_loss_prev >= 0.0))
    throw ContractError("dynamic_weight: previous-epoch mean loss must be >= 0, got " +
                        std::to_string(*mean_part_loss_prev));
  return 1.0 / (1.0 + *mean_part_loss_prev);
}

Var total_loss(const LossComponents& c, Mode mode, double weight) {
  if (!c.identity.defined() || !c.triplet.defined()) throw ContractError("total_loss: baseline components missing");
  if (uses_parts(mode) && !c.part) throw ContractError("total_loss: mode " + to_string(mode) + " needs the part loss");
  if (uses_graph(mode) && !c.graph) throw ContractError("total_loss: mode " + to_string(mode) + " needs the graph loss");
  Var total = ops::add(c.identity, c.triplet);
  if (uses_parts(mode)) total = ops::add(total, *c.part);
  if (uses_graph(mode)) total = ops::add(total, ops::scale(*c.graph, weight));
  return total;
}

LossReport summarize(const LossComponents& c, Mode mode, double weight, const Var& total) {
  LossReport r;
  r.identity = c.identity.item();
  r.triplet = c.triplet.item();
  r.baseline = r.identity + r.triplet;
  if (uses_parts(mode)) r.part = c.part->item();
  r.part_aggregate = r.baseline + r.part.value_or(0.0);
  if (uses_graph(mode)) r.graph = c.graph->item();
  r.weight = weight;
  r.total = total.item();
  return r;
}

nlohmann::json LossReport::to_json() const {
  nlohmann::json j{{"type", "step"},  {"epoch", epoch},          {"step", step},
                   {"lr", lr},        {"L_id", identity},        {"L_tri", triplet},
                   {"L_b", baseline}, {"L_P", part_aggregate},   {"dynamic_weight", weight},
                   {"L_total", total}};
  if (part) j["L_wp"] = *part;
  if (graph) j["L_g"] = *graph;
  return j;
}

}  // namespace ddag

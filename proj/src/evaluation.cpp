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
#include "ddag/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ddag/checkpoint.hpp"
#include "ddag/errors.hpp"

namespace ddag {

std::string to_string(Direction d) {
  return d == Direction::visible_to_infrared ? "visible_to_infrared" : "infrared_to_visible";
}

Direction direction_from_string(const std::string& s) {
  if (s == "visible_to_infrared" || s == "v2i") return Direction::visible_to_infrared;
  if (s == "infrared_to_visible" || s == "i2v") return Direction::infrared_to_visible;
  throw ConfigError("unknown direction '" + s + "' (expected visible_to_infrared or infrared_to_visible)");
}

double EvalReport::rank(int k) const {
  for (std::size_t i = 0; i < ks.size(); ++i)
    if (ks[i] == k) return rank_accuracy[i];
  throw ContractError("rank-" + std::to_string(k) + " was not evaluated");
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json ranks = nlohmann::json::object();
  for (std::size_t i = 0; i < ks.size(); ++i) ranks["rank" + std::to_string(ks[i])] = rank_accuracy[i];
  return {{"direction", to_string(direction)}, {"ranks", ranks},          {"mAP", mean_ap},
          {"num_query", num_query},           {"num_gallery", num_gallery}};
}

std::string EvalReport::csv_header() { return "run,direction,k,rank_accuracy,mAP,num_query,num_gallery"; }

std::string EvalReport::csv_row(const std::string& run) const {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < ks.size(); ++i) {
    if (i) os << '\n';
    os << run << ',' << to_string(direction) << ',' << ks[i] << ',' << rank_accuracy[i] << ',' << mean_ap << ','
       << num_query << ',' << num_gallery;
  }
  return os.str();
}

std::unique_ptr<DdagModel> load_model(const std::filesystem::path& checkpoint) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  ModelConfig config;
  try {
    config = ModelConfig::from_json(ck.header.at("config").at("model"));
  } catch (const nlohmann::json::exception& e) {
    throw ModelError("checkpoint lacks a model config: " + std::string(e.what()));
  }
  Rng rng(0);
  auto model = std::make_unique<DdagModel>(config, rng);
  ParamSet set = model->parameters();
  for (auto& p : set.params) {
    const Tensor& t = ck.tensor(p.name);
    if (t.shape() != p.var.shape())
      throw ModelError("checkpoint tensor " + p.name + " has shape " + shape_str(t.shape()) + ", model expects " +
                       shape_str(p.var.shape()));
    p.var.mutable_value() = t;
  }
  for (auto& b : set.buffers) *b.tensor = ck.tensor(b.name);
  return model;
}

Tensor extract_features(DdagModel& model, const DatasetManifest& manifest, const std::vector<SampleRecord>& records,
                        Index batch_size) {
  if (batch_size < 1) throw ContractError("extract_features: batch size must be >= 1");
  NoGradGuard no_grad;
  const Index n = static_cast<Index>(records.size());
  const Index c = model.config().backbone.feature_dim();
  Tensor out({n, c});
  for (Index start = 0; start < n; start += batch_size) {
    const Index end = std::min(n, start + batch_size);
    const Index h = manifest.image_height, w = manifest.image_width;
    Tensor images({end - start, 3, h, w});
    std::vector<bool> visible;
    for (Index i = start; i < end; ++i) {
      const auto& rec = records[static_cast<std::size_t>(i)];
      const Tensor net = to_network_input(load_image(manifest, rec));
      std::copy(net.values().begin(), net.values().end(), images.data() + (i - start) * 3 * h * w);
      visible.push_back(rec.modality == Modality::visible);
    }
    const ModelOutput o = model.forward(Var(std::move(images)), visible, {}, false);
    std::copy(o.representation.value().values().begin(), o.representation.value().values().end(),
              out.data() + start * c);
  }
  return out;
}

Tensor distance_matrix(const Tensor& query, const Tensor& gallery) {
  if (query.rank() != 2 || gallery.rank() != 2 || query.dim(1) != gallery.dim(1))
    throw ContractError("distance_matrix: feature dimensions differ (" + shape_str(query.shape()) + " vs " +
                        shape_str(gallery.shape()) + ")");
  const Index nq = query.dim(0), ng = gallery.dim(0), c = query.dim(1);
  Tensor d({nq, ng});
  for (Index i = 0; i < nq; ++i)
    for (Index j = 0; j < ng; ++j) {
      double s = 0.0;
      for (Index k = 0; k < c; ++k) {
        const double diff = query.at(i, k) - gallery.at(j, k);
        s += diff * diff;
      }
      d.at(i, j) = std::sqrt(s);
    }
  return d;
}

namespace {

void check_protocol(const Tensor& distances, std::span<const int> ql, std::span<const int> gl) {
  if (distances.rank() != 2 || distances.dim(0) != static_cast<Index>(ql.size()) ||
      distances.dim(1) != static_cast<Index>(gl.size()))
    throw ContractError("distance matrix shape does not match label counts");
  for (std::size_t q = 0; q < ql.size(); ++q)
    if (std::find(gl.begin(), gl.end(), ql[q]) == gl.end())
      throw ProtocolError("query " + std::to_string(q) + " (label " + std::to_string(ql[q]) + ") has no gallery match");
}

// Gallery indices sorted by ascending distance; stable so ties keep index order.
std::vector<Index> ranking(const Tensor& distances, Index q) {
  std::vector<Index> order(static_cast<std::size_t>(distances.dim(1)));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return distances.at(q, a) < distances.at(q, b); });
  return order;
}

}  // namespace

std::vector<double> cmc(const Tensor& distances, std::span<const int> ql, std::span<const int> gl,
                        std::span<const int> ks) {
  check_protocol(distances, ql, gl);
  for (int k : ks)
    if (k < 1) throw ContractError("cmc: ranks must be >= 1");
  std::vector<double> hits(ks.size(), 0.0);
  for (Index q = 0; q < distances.dim(0); ++q) {
    const auto order = ranking(distances, q);
    Index first = 0;
    while (gl[static_cast<std::size_t>(order[static_cast<std::size_t>(first)])] != ql[static_cast<std::size_t>(q)]) ++first;
    for (std::size_t i = 0; i < ks.size(); ++i)
      if (first + 1 <= ks[i]) hits[i] += 1.0;
  }
  for (auto& h : hits) h /= static_cast<double>(ql.size());
  return hits;
}

double mean_average_precision(const Tensor& distances, std::span<const int> ql, std::span<const int> gl) {
  check_protocol(distances, ql, gl);
  double total = 0.0;
  for (Index q = 0; q < distances.dim(0); ++q) {
    const auto order = ranking(distances, q);
    double ap = 0.0;
    int found = 0;
    for (std::size_t pos = 0; pos < order.size(); ++pos)
      if (gl[static_cast<std::size_t>(order[pos])] == ql[static_cast<std::size_t>(q)])
        ap += static_cast<double>(++found) / static_cast<double>(pos + 1);
    total += ap / found;
  }
  return total / static_cast<double>(ql.size());
}

EvalReport evaluate(DdagModel& model, const DatasetManifest& manifest, Direction direction, std::span<const int> ks) {
  const Modality qm = direction == Direction::visible_to_infrared ? Modality::visible : Modality::infrared;
  std::vector<SampleRecord> query, gallery;
  for (const auto& r : manifest.records_for(manifest.split.test_ids)) (r.modality == qm ? query : gallery).push_back(r);
  if (query.empty() || gallery.empty())
    throw ProtocolError("test split has no " + std::string(query.empty() ? "query" : "gallery") + " images for " +
                        to_string(direction));

  const Tensor qf = extract_features(model, manifest, query);
  const Tensor gf = extract_features(model, manifest, gallery);
  std::vector<int> ql, gl;
  for (const auto& r : query) ql.push_back(r.identity);
  for (const auto& r : gallery) gl.push_back(r.identity);
  const Tensor d = distance_matrix(qf, gf);

  EvalReport report;
  report.direction = direction;
  report.ks.assign(ks.begin(), ks.end());
  report.rank_accuracy = cmc(d, ql, gl, ks);
  report.mean_ap = mean_average_precision(d, ql, gl);
  report.num_query = static_cast<Index>(query.size());
  report.num_gallery = static_cast<Index>(gallery.size());
  return report;
}

EvalReport evaluate(const std::filesystem::path& checkpoint, const DatasetManifest& manifest, Direction direction,
                    std::span<const int> ks) {
  auto model = load_model(checkpoint);
  return evaluate(*model, manifest, direction, ks);
}

}  // namespace ddag

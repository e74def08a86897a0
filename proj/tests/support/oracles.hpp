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

// Naive reference implementations used to cross-check the library. They work
// on nested std::vector, use raw exponentials without max-subtraction, and
// share no code with src/.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "ddag/tensor.hpp"

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

inline Mat to_mat(const ddag::Tensor& t) {
  Mat m(static_cast<std::size_t>(t.dim(0)), Vec(static_cast<std::size_t>(t.dim(1))));
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m[i].size(); ++j) m[i][j] = t.at(static_cast<ddag::Index>(i), static_cast<ddag::Index>(j));
  return m;
}

inline std::vector<Mat> to_mats(const ddag::Tensor& t) {
  std::vector<Mat> out(static_cast<std::size_t>(t.dim(0)),
                       Mat(static_cast<std::size_t>(t.dim(1)), Vec(static_cast<std::size_t>(t.dim(2)))));
  for (std::size_t a = 0; a < out.size(); ++a)
    for (std::size_t b = 0; b < out[a].size(); ++b)
      for (std::size_t c = 0; c < out[a][b].size(); ++c)
        out[a][b][c] = t.at(static_cast<ddag::Index>(a), static_cast<ddag::Index>(b), static_cast<ddag::Index>(c));
  return out;
}

inline Vec apply(const Mat& w, const Vec& x) {
  Vec y(w.size(), 0.0);
  for (std::size_t r = 0; r < w.size(); ++r)
    for (std::size_t c = 0; c < x.size(); ++c) y[r] += w[r][c] * x[c];
  return y;
}

inline double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double euclid(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

// ---- weighted-part attention ----------------------------------------------

struct PartResult {
  std::vector<Mat> alpha;     // K x p x p
  std::vector<Mat> attended;  // K x p x C
  Mat aggregated;             // K x C
};

inline PartResult part_attention(const std::vector<Mat>& parts, const Mat& w_u, const Mat& w_v, const Mat& w_z,
                                 const Vec& part_weights, const Mat& embedded) {
  PartResult r;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::size_t p = parts[k].size();
    Mat alpha(p, Vec(p));
    for (std::size_t i = 0; i < p; ++i) {
      double denom = 0.0;
      for (std::size_t j = 0; j < p; ++j) denom += std::exp(dot(apply(w_u, parts[k][i]), apply(w_v, parts[k][j])));
      for (std::size_t j = 0; j < p; ++j)
        alpha[i][j] = std::exp(dot(apply(w_u, parts[k][i]), apply(w_v, parts[k][j]))) / denom;
    }
    Mat attended(p, Vec(w_z.size(), 0.0));
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = 0; j < p; ++j) {
        const Vec z = apply(w_z, parts[k][j]);
        for (std::size_t c = 0; c < z.size(); ++c) attended[i][c] += alpha[i][j] * z[c];
      }
    Vec agg = embedded[k];
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t c = 0; c < agg.size(); ++c) agg[c] += part_weights[i] * attended[i][c];
    r.alpha.push_back(alpha);
    r.attended.push_back(attended);
    r.aggregated.push_back(agg);
  }
  return r;
}

// ---- graph attention ------------------------------------------------------

inline Mat adjacency(const std::vector<int>& labels) {
  Mat a(labels.size(), Vec(labels.size(), 0.0));
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (std::size_t j = 0; j < labels.size(); ++j) a[i][j] = labels[i] == labels[j] ? 1.0 : 0.0;
  return a;
}

// Coefficients of one head: LeakyReLU(w . [h x_i || h x_j]) softmaxed over
// same-label j, zero elsewhere.
inline Mat graph_coeffs(const Mat& nodes, const std::vector<int>& labels, const Mat& projection, const Vec& weighting,
                        double slope = 0.2) {
  const std::size_t k = nodes.size();
  Mat h;
  for (const auto& x : nodes) h.push_back(apply(projection, x));
  Mat out(k, Vec(k, 0.0));
  for (std::size_t i = 0; i < k; ++i) {
    Vec score(k, 0.0);
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      if (labels[i] != labels[j]) continue;
      Vec cat = h[i];
      cat.insert(cat.end(), h[j].begin(), h[j].end());
      double e = dot(weighting, cat);
      e = e > 0 ? e : slope * e;
      score[j] = std::exp(e);
      denom += score[j];
    }
    for (std::size_t j = 0; j < k; ++j)
      if (labels[i] == labels[j]) out[i][j] = score[j] / denom;
  }
  return out;
}

struct HeadWeights {
  Mat projection;
  Vec weighting;
};

// sum_j alpha[i,j] h(x_j) for one head.
inline Mat graph_head(const Mat& nodes, const std::vector<int>& labels, const HeadWeights& head) {
  const Mat alpha = graph_coeffs(nodes, labels, head.projection, head.weighting);
  Mat out(nodes.size(), Vec(head.projection.size(), 0.0));
  for (std::size_t i = 0; i < nodes.size(); ++i)
    for (std::size_t j = 0; j < nodes.size(); ++j) {
      const Vec hj = apply(head.projection, nodes[j]);
      for (std::size_t a = 0; a < hj.size(); ++a) out[i][a] += alpha[i][j] * hj[a];
    }
  return out;
}

inline Mat graph_aggregate(const Mat& nodes, const std::vector<int>& labels, const std::vector<HeadWeights>& heads) {
  Mat out(nodes.size());
  for (const auto& head : heads) {
    const Mat part = graph_head(nodes, labels, head);
    for (std::size_t i = 0; i < nodes.size(); ++i) out[i].insert(out[i].end(), part[i].begin(), part[i].end());
  }
  for (auto& row : out)
    for (auto& v : row) v = v > 0 ? v : std::exp(v) - 1.0;
  return out;
}

inline double cross_entropy(const Mat& logits, const std::vector<int>& labels) {
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    double z = 0.0;
    for (double v : logits[i]) z += std::exp(v);
    total += std::log(z) - logits[i][static_cast<std::size_t>(labels[i])];
  }
  return total / static_cast<double>(logits.size());
}

// ---- batch-hard triplet ---------------------------------------------------

// Hardest triplet per anchor found by enumerating every (positive, negative)
// pair: max over pairs of the hinge equals the hinge of (max d_pos - min d_neg).
inline double hard_triplet(const Mat& features, const std::vector<int>& labels, double margin) {
  const std::size_t k = features.size();
  double total = 0.0;
  for (std::size_t a = 0; a < k; ++a) {
    double worst = 0.0;
    for (std::size_t p = 0; p < k; ++p) {
      if (p == a || labels[p] != labels[a]) continue;
      for (std::size_t n = 0; n < k; ++n) {
        if (labels[n] == labels[a]) continue;
        worst = std::max(worst, euclid(features[a], features[p]) - euclid(features[a], features[n]) + margin);
      }
    }
    total += worst;
  }
  return total / static_cast<double>(k);
}

// ---- retrieval metrics ----------------------------------------------------

inline Mat distances(const Mat& query, const Mat& gallery) {
  Mat d(query.size(), Vec(gallery.size()));
  for (std::size_t i = 0; i < query.size(); ++i)
    for (std::size_t j = 0; j < gallery.size(); ++j) d[i][j] = euclid(query[i], gallery[j]);
  return d;
}

// 0-based position of gallery item g in the ranking of row `d`: the number
// of items strictly closer, or equally close with a smaller index.
inline std::size_t position(const Vec& d, std::size_t g) {
  std::size_t pos = 0;
  for (std::size_t j = 0; j < d.size(); ++j)
    if (d[j] < d[g] || (d[j] == d[g] && j < g)) ++pos;
  return pos;
}

inline Vec cmc(const Mat& d, const std::vector<int>& ql, const std::vector<int>& gl, const std::vector<int>& ks) {
  Vec out(ks.size(), 0.0);
  for (std::size_t q = 0; q < d.size(); ++q) {
    std::size_t first = std::numeric_limits<std::size_t>::max();
    for (std::size_t g = 0; g < gl.size(); ++g)
      if (gl[g] == ql[q]) first = std::min(first, position(d[q], g));
    for (std::size_t i = 0; i < ks.size(); ++i)
      if (first < static_cast<std::size_t>(ks[i])) out[i] += 1.0;
  }
  for (auto& v : out) v /= static_cast<double>(d.size());
  return out;
}

inline double average_precision(const Vec& d, int label, const std::vector<int>& gl) {
  std::vector<std::size_t> hits;
  for (std::size_t g = 0; g < gl.size(); ++g)
    if (gl[g] == label) hits.push_back(position(d, g));
  std::sort(hits.begin(), hits.end());
  double ap = 0.0;
  for (std::size_t i = 0; i < hits.size(); ++i) ap += static_cast<double>(i + 1) / static_cast<double>(hits[i] + 1);
  return ap / static_cast<double>(hits.size());
}

inline double mean_ap(const Mat& d, const std::vector<int>& ql, const std::vector<int>& gl) {
  double s = 0.0;
  for (std::size_t q = 0; q < d.size(); ++q) s += average_precision(d[q], ql[q], gl);
  return s / static_cast<double>(d.size());
}

inline double max_abs_diff(const Mat& a, const Mat& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) m = std::max(m, std::abs(a[i][j] - b[i][j]));
  return m;
}

}  // namespace oracle

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
#include <doctest.h>

#include <cmath>

#include "ddag/cgsa.hpp"
#include "ddag/errors.hpp"
#include "ddag/objectives.hpp"
#include "ddag/ops.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace ddag;

namespace {

Classifier fixed_classifier(Tensor w) {
  Classifier c;
  c.weight = Var(std::move(w), true);
  return c;
}

double triplet_of(std::vector<double> xs, std::vector<int> labels) {
  const auto k = static_cast<Index>(xs.size());
  Tensor f({k, 1}, std::move(xs));
  return hard_triplet_loss(Var(f), labels, 0.3).item();
}

std::vector<int> balanced_labels(Index k, Rng& rng) {
  // every label at least twice, at least two labels
  const Index classes = 2 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(k / 2 - 1)));
  std::vector<int> labels;
  for (Index i = 0; i < k; ++i) labels.push_back(static_cast<int>(i < 2 * classes ? i / 2 : static_cast<Index>(rng.below(static_cast<std::uint64_t>(classes)))));
  rng.shuffle(labels.begin(), labels.end());
  return labels;
}

}  // namespace

TEST_CASE("mode names round trip") {
  for (auto m : {Mode::B, Mode::BP, Mode::BG, Mode::BPG}) CHECK(mode_from_string(to_string(m)) == m);
  CHECK(to_string(Mode::BPG) == "B+P+G");
  CHECK_THROWS_AS(mode_from_string("B+X"), ConfigError);
  CHECK_FALSE(uses_parts(Mode::BG));
  CHECK(uses_graph(Mode::BG));
}

TEST_CASE("identity loss examples") {
  SUBCASE("uniform logits give ln C") {
    auto cls = fixed_classifier(Tensor({5, 3}, 0.0));
    CHECK(identity_loss(Var(Tensor({4, 3}, 1.0)), std::vector<int>{0, 1, 2, 4}, cls).item() ==
          doctest::Approx(std::log(5.0)));
  }
  SUBCASE("scaled one-hot logits give ~0") {
    auto cls = fixed_classifier(Tensor({2, 2}, {1000.0, 0.0, 0.0, 1000.0}));
    CHECK(identity_loss(Var(Tensor({2, 2}, {1.0, 0.0, 0.0, 1.0})), std::vector<int>{0, 1}, cls).item() ==
          doctest::Approx(0.0));
  }
  SUBCASE("K=1 is the sample's NLL") {
    auto cls = fixed_classifier(Tensor({3, 1}, {1.0, 2.0, 3.0}));
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    CHECK(identity_loss(Var(Tensor({1, 1}, 1.0)), std::vector<int>{1}, cls).item() ==
          doctest::Approx(std::log(z) - 2.0));
  }
}

TEST_CASE("triplet hand examples") {
  // anchor 0, positive 1, negatives at 3: every hinge is inactive
  CHECK(triplet_of({0.0, 1.0, 3.0, 3.0}, {0, 0, 1, 1}) == doctest::Approx(0.0));
  // anchor 0 with positive at 2, negative at 1: hinge 1.3 for both label-0 anchors
  CHECK(triplet_of({0.0, 2.0, 1.0, 1.0}, {0, 0, 1, 1}) == doctest::Approx((1.3 + 1.3) / 4.0));
}

TEST_CASE("triplet rejects batches without positives or negatives") {
  CHECK_THROWS_AS(triplet_of({0.0, 1.0, 2.0}, {0, 0, 1}), ContractError);
  CHECK_THROWS_AS(triplet_of({0.0, 1.0}, {0, 0}), ContractError);
}

TEST_CASE("triplet matches the brute-force mining oracle") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const Index k = 4 + static_cast<Index>(rng.below(5));
    const Index c = 1 + static_cast<Index>(rng.below(4));
    const auto labels = balanced_labels(k, rng);
    Var f(testing::random_tensor({k, c}, rng));
    const double got = hard_triplet_loss(f, labels, 0.3).item();
    CHECK(std::abs(got - oracle::hard_triplet(oracle::to_mat(f.value()), labels, 0.3)) < 1e-12);
  }
}

TEST_CASE("well-separated classes give zero triplet loss") {
  Rng rng(3);
  Tensor f({6, 2});
  const std::vector<int> labels{0, 0, 1, 1, 2, 2};
  for (Index i = 0; i < 6; ++i) {
    f.at(i, 0) = 10.0 * labels[static_cast<std::size_t>(i)] + rng.uniform(0.0, 0.1);
    f.at(i, 1) = rng.uniform(0.0, 0.1);
  }
  CHECK(hard_triplet_loss(Var(f), labels).item() == 0.0);
}

TEST_CASE("part loss is the identity loss on x*") {
  Rng rng(4);
  Classifier cls(6, 4, rng);
  Var x(testing::random_tensor({5, 6}, rng));
  const std::vector<int> labels{0, 3, 2, 1, 1};
  CHECK(part_loss(x, labels, cls).item() == identity_loss(x, labels, cls).item());
}

TEST_CASE("dynamic weight schedule") {
  CHECK(dynamic_weight(std::nullopt) == 0.0);
  CHECK(dynamic_weight(0.0) == 1.0);
  CHECK(dynamic_weight(1.0) == 0.5);
  double prev = 1.0;
  for (double e = 0.1; e < 50.0; e *= 1.5) {
    const double w = dynamic_weight(e);
    CHECK(w < prev);
    CHECK(w > 0.0);
    prev = w;
  }
  CHECK_THROWS_AS(dynamic_weight(-0.5), ContractError);
  CHECK_THROWS_AS(dynamic_weight(std::nan("")), ContractError);
}

TEST_CASE("total loss composition") {
  LossComponents c;
  c.identity = Var(Tensor::scalar(2.0));
  c.triplet = Var(Tensor::scalar(0.5));
  SUBCASE("mode B is the baseline") {
    const auto t = total_loss(c, Mode::B, 0.7);
    CHECK(t.item() == doctest::Approx(2.5));
    const auto r = summarize(c, Mode::B, 0.7, t);
    CHECK_FALSE(r.part.has_value());
    CHECK_FALSE(r.graph.has_value());
    CHECK(r.total == r.baseline);
    CHECK(r.part_aggregate == r.baseline);
    const auto j = r.to_json();
    CHECK_FALSE(j.contains("L_wp"));
    CHECK_FALSE(j.contains("L_g"));
  }
  SUBCASE("B+P+G with L_P = 3, L_g = 1, previous mean 1") {
    c.part = Var(Tensor::scalar(0.5));
    c.graph = Var(Tensor::scalar(1.0));
    const auto t = total_loss(c, Mode::BPG, dynamic_weight(1.0));
    CHECK(t.item() == doctest::Approx(3.5));
    const auto r = summarize(c, Mode::BPG, dynamic_weight(1.0), t);
    CHECK(r.part_aggregate == doctest::Approx(3.0));
    CHECK(r.baseline + *r.part == doctest::Approx(r.part_aggregate));
    CHECK(r.part_aggregate + r.weight * *r.graph == doctest::Approx(r.total));
  }
  SUBCASE("first epoch of B+P+G is L_P") {
    c.part = Var(Tensor::scalar(0.5));
    c.graph = Var(Tensor::scalar(9.0));
    CHECK(total_loss(c, Mode::BPG, dynamic_weight(std::nullopt)).item() == doctest::Approx(3.0));
  }
  SUBCASE("missing components are contract errors") {
    CHECK_THROWS_AS(total_loss(c, Mode::BP, 0.0), ContractError);
    CHECK_THROWS_AS(total_loss(c, Mode::BG, 0.0), ContractError);
  }
}

TEST_CASE("every loss passes gradcheck") {
  Rng rng(5);
  const std::vector<int> labels{0, 1, 2, 0, 1, 2};
  auto emb = testing::leaf({6, 4}, rng), xstar = testing::leaf({6, 4}, rng), pooled = testing::leaf({6, 4}, rng);
  Classifier cls;
  cls.weight = testing::leaf({3, 4}, rng, 0.5);
  CgsaParams graph(4, 2, 3, 3, rng);
  SUBCASE("identity") {
    auto f = [&] { return identity_loss(emb, labels, cls); };
    CHECK(testing::gradcheck(f, {{"emb", emb}, {"w", cls.weight}}).max_rel_error < 1e-4);
  }
  SUBCASE("triplet") {
    auto f = [&] { return hard_triplet_loss(pooled, labels); };
    auto res = testing::gradcheck(f, {{"pooled", pooled}});
    INFO(res.worst);
    CHECK(res.max_rel_error < 1e-4);
  }
  SUBCASE("part") {
    auto f = [&] { return part_loss(xstar, labels, cls); };
    CHECK(testing::gradcheck(f, {{"xstar", xstar}, {"w", cls.weight}}).max_rel_error < 1e-4);
  }
  SUBCASE("graph and total") {
    auto f = [&] {
      LossComponents c;
      c.identity = identity_loss(emb, labels, cls);
      c.triplet = hard_triplet_loss(pooled, labels);
      c.part = part_loss(xstar, labels, cls);
      c.graph = graph_loss(cgsa_forward(pooled, labels, graph).output_nodes, labels);
      return total_loss(c, Mode::BPG, 0.4);
    };
    auto res = testing::gradcheck(f, {{"emb", emb}, {"xstar", xstar}, {"pooled", pooled}, {"w", cls.weight}});
    INFO(res.worst);
    CHECK(res.max_rel_error < 1e-4);
  }
}

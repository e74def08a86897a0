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

#include "ddag/errors.hpp"
#include "ddag/iwpa.hpp"
#include "ddag/ops.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace ddag;

namespace {

IwpaParams random_params(Index c, int p, Rng& rng) {
  IwpaParams params(c, p, rng);
  params.part_weights = testing::leaf({p}, rng);
  return params;
}

}  // namespace

TEST_CASE("stripes of an H=6 map with p=3") {
  Tensor fm({1, 1, 6, 2});
  for (Index h = 0; h < 6; ++h)
    for (Index w = 0; w < 2; ++w) fm.at(0, 0, h, w) = static_cast<double>(h);
  const auto parts = extract_parts(Var(fm), 3).value();
  CHECK(parts.at(0, 0, 0) == doctest::Approx(0.5));
  CHECK(parts.at(0, 1, 0) == doctest::Approx(2.5));
  CHECK(parts.at(0, 2, 0) == doctest::Approx(4.5));
}

TEST_CASE("stripes of an H=7 map with p=3 are (3,2,2)") {
  Tensor fm({1, 1, 7, 1});
  for (Index h = 0; h < 7; ++h) fm.at(0, 0, h, 0) = static_cast<double>(h);
  const auto parts = extract_parts(Var(fm), 3).value();
  CHECK(parts.at(0, 0, 0) == doctest::Approx(1.0));
  CHECK(parts.at(0, 1, 0) == doctest::Approx(3.5));
  CHECK(parts.at(0, 2, 0) == doctest::Approx(5.5));
  CHECK_THROWS_AS(extract_parts(Var(fm), 8), ConfigError);
}

TEST_CASE("constant map gives constant parts") {
  const auto parts = extract_parts(Var(Tensor({2, 4, 6, 3}, 0.7)), 3).value();
  for (Index i = 0; i < parts.numel(); ++i) CHECK(parts[i] == doctest::Approx(0.7));
}

TEST_CASE("identical parts attend uniformly") {
  Rng rng(1);
  IwpaParams params(6, 4, rng);
  Tensor parts({1, 4, 6});
  const auto row = testing::random_tensor({6}, rng);
  for (Index i = 0; i < 4; ++i)
    for (Index c = 0; c < 6; ++c) parts.at(0, i, c) = row[c];
  const auto alpha = part_attention(Var(parts), params).value();
  for (Index i = 0; i < alpha.numel(); ++i) CHECK(alpha[i] == doctest::Approx(0.25));
}

TEST_CASE("closed-form two-part softmax") {
  Rng rng(2);
  IwpaParams params(2, 2, rng);
  params.w_u.mutable_value() = Tensor({1, 2}, {1.0, 0.0});
  params.w_v.mutable_value() = Tensor({1, 2}, {0.0, 1.0});
  Tensor parts({1, 2, 2}, {0.0, 0.0, 1.0, std::log(3.0)});
  const auto logits = part_logits(Var(parts), params).value();
  CHECK(logits.at(0, 1, 1) == doctest::Approx(std::log(3.0)));
  const auto alpha = part_attention(Var(parts), params).value();
  CHECK(alpha.at(0, 0, 0) == doctest::Approx(0.5));
  CHECK(alpha.at(0, 0, 1) == doctest::Approx(0.5));
  CHECK(alpha.at(0, 1, 0) == doctest::Approx(0.25));
  CHECK(alpha.at(0, 1, 1) == doctest::Approx(0.75));
}

TEST_CASE("large logits do not overflow") {
  Rng rng(3);
  IwpaParams params(2, 2, rng);
  params.w_u.mutable_value() = Tensor({1, 2}, {1.0, 0.0});
  params.w_v.mutable_value() = Tensor({1, 2}, {0.0, 1.0});
  Tensor parts({1, 2, 2}, {40.0, 40.0, 40.0, 45.0});
  const auto alpha = part_attention(Var(parts), params).value();
  CHECK(alpha.all_finite());
  CHECK(alpha.at(0, 0, 0) + alpha.at(0, 0, 1) == doctest::Approx(1.0));
}

TEST_CASE("non-finite logits are reported") {
  Rng rng(4);
  IwpaParams params(2, 2, rng);
  Tensor parts({1, 2, 2}, {std::nan(""), 0.0, 1.0, 1.0});
  CHECK_THROWS_AS(part_logits(Var(parts), params), NumericalError);
}

TEST_CASE("attending with identity and uniform maps") {
  Rng rng(5);
  IwpaParams params(4, 3, rng);
  Tensor parts = testing::random_tensor({1, 3, 4}, rng);
  const auto z = ops::linear(ops::reshape(Var(parts), {3, 4}), params.w_z).value();
  Tensor eye({1, 3, 3});
  for (Index i = 0; i < 3; ++i) eye.at(0, i, i) = 1.0;
  const auto id = attend_parts(Var(eye), Var(parts), params).value();
  for (Index i = 0; i < 3; ++i)
    for (Index c = 0; c < 4; ++c) CHECK(id.at(0, i, c) == doctest::Approx(z.at(i, c)));
  const auto uni = attend_parts(Var(Tensor({1, 3, 3}, 1.0 / 3.0)), Var(parts), params).value();
  for (Index c = 0; c < 4; ++c) {
    const double mean = (z.at(0, c) + z.at(1, c) + z.at(2, c)) / 3.0;
    for (Index i = 0; i < 3; ++i) CHECK(uni.at(0, i, c) == doctest::Approx(mean));
  }
}

TEST_CASE("residual aggregation degeneracies") {
  Rng rng(6);
  IwpaParams params(4, 1, rng);
  Var emb(testing::random_tensor({2, 4}, rng));
  Var att(testing::random_tensor({2, 1, 4}, rng));
  SUBCASE("zero weights give BN(x^o) exactly") {
    CHECK(max_abs_diff(rbn_aggregate(emb, att, params).value(), emb.value()) == 0.0);
  }
  SUBCASE("p=1, w=[1] adds the attended part") {
    params.part_weights.mutable_value().fill(1.0);
    const auto out = rbn_aggregate(emb, att, params).value();
    for (Index k = 0; k < 2; ++k)
      for (Index c = 0; c < 4; ++c) CHECK(out.at(k, c) == doctest::Approx(emb.value().at(k, c) + att.value().at(k, 0, c)));
  }
}

TEST_CASE("at initialization x* equals BN(x^o)") {
  Rng rng(7);
  IwpaParams params(8, 3, rng);
  Var fm(testing::random_tensor({3, 8, 6, 3}, rng));
  Var emb(testing::random_tensor({3, 8}, rng));
  const auto state = iwpa_forward(fm, emb, params);
  CHECK(max_abs_diff(state.aggregated.value(), emb.value()) == 0.0);
  CHECK(state.alpha.shape() == Shape{3, 3, 3});
}

TEST_CASE("matches the brute-force oracle") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const int p = 1 + static_cast<int>(rng.below(4));
    const Index c = 2 * (1 + static_cast<Index>(rng.below(3)));
    const Index k = 1 + static_cast<Index>(rng.below(4));
    auto params = random_params(c, p, rng);
    Var parts(testing::random_tensor({k, p, c}, rng));
    Var emb(testing::random_tensor({k, c}, rng));
    const auto alpha = part_attention(parts, params);
    const auto attended = attend_parts(alpha, parts, params);
    const auto agg = rbn_aggregate(emb, attended, params);
    const auto ref = oracle::part_attention(oracle::to_mats(parts.value()), oracle::to_mat(params.w_u.value()),
                                            oracle::to_mat(params.w_v.value()), oracle::to_mat(params.w_z.value()),
                                            params.part_weights.value().storage(), oracle::to_mat(emb.value()));
    const auto got_alpha = oracle::to_mats(alpha.value());
    const auto got_att = oracle::to_mats(attended.value());
    for (Index i = 0; i < k; ++i) {
      CHECK(oracle::max_abs_diff(got_alpha[i], ref.alpha[i]) < 1e-10);
      CHECK(oracle::max_abs_diff(got_att[i], ref.attended[i]) < 1e-10);
    }
    CHECK(oracle::max_abs_diff(oracle::to_mat(agg.value()), ref.aggregated) < 1e-10);
  }
}

TEST_CASE("alpha is row-stochastic over 100 seeds") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed + 500);
    const int p = 1 + static_cast<int>(rng.below(6));
    auto params = random_params(8, p, rng);
    const auto alpha = part_attention(Var(testing::random_tensor({3, p, 8}, rng, 2.0)), params).value();
    for (Index k = 0; k < 3; ++k)
      for (Index i = 0; i < p; ++i) {
        double s = 0.0;
        for (Index j = 0; j < p; ++j) {
          CHECK(alpha.at(k, i, j) >= 0.0);
          s += alpha.at(k, i, j);
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
      }
  }
}

TEST_CASE("IWPA block passes gradcheck (p=3, C=8)") {
  Rng rng(8);
  auto params = random_params(8, 3, rng);
  params.w_u = testing::leaf({4, 8}, rng, 0.4);
  params.w_v = testing::leaf({4, 8}, rng, 0.4);
  params.w_z = testing::leaf({8, 8}, rng, 0.4);
  auto fm = testing::leaf({2, 8, 3, 2}, rng);
  auto emb = testing::leaf({2, 8}, rng);
  auto f = [&] {
    Rng p(3);
    return testing::probe(iwpa_forward(fm, emb, params).aggregated, p);
  };
  auto res = testing::gradcheck(f, {{"feature_map", fm},
                                    {"embedded", emb},
                                    {"w_u", params.w_u},
                                    {"w_v", params.w_v},
                                    {"w_z", params.w_z},
                                    {"part_weights", params.part_weights}});
  INFO(res.worst, " analytic ", res.analytic, " numeric ", res.numeric);
  CHECK(res.max_rel_error < 1e-4);
}

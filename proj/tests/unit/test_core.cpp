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
#include <filesystem>
#include <fstream>
#include <set>

#include "ddag/autograd.hpp"
#include "ddag/checkpoint.hpp"
#include "ddag/errors.hpp"
#include "ddag/ops.hpp"
#include "ddag/rng.hpp"
#include "support/gradcheck.hpp"

using namespace ddag;
using testing::gradcheck;
using testing::leaf;

TEST_CASE("rng streams are reproducible and restorable") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  const auto saved = a.state();
  const double x = a.normal();
  Rng c;
  c.set_state(saved);
  CHECK(c.normal() == x);
  CHECK_THROWS_AS(c.set_state("not a state"), FormatError);
}

TEST_CASE("rng below is in range and covers it") {
  Rng r(3);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 2000; ++i) {
    const auto v = r.below(7);
    REQUIRE(v < 7);
    seen.insert(v);
  }
  CHECK(seen.size() == 7);
}

TEST_CASE("derive_seed separates tuples") {
  CHECK(derive_seed({1, 2}) != derive_seed({2, 1}));
  CHECK(derive_seed({1, 2}) == derive_seed({1, 2}));
}

TEST_CASE("backward accumulates through shared subexpressions") {
  Var x(Tensor({2}, {1.5, -2.0}), true);
  auto y = ops::sum(ops::mul(x, x));  // sum x^2
  y.backward();
  CHECK(x.grad()[0] == doctest::Approx(3.0));
  CHECK(x.grad()[1] == doctest::Approx(-4.0));
}

TEST_CASE("no-grad guard drops the tape") {
  Var x(Tensor({2}, {1.0, 2.0}), true);
  NoGradGuard guard;
  auto y = ops::sum(x);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("elementwise and matrix ops pass gradcheck") {
  Rng rng(11);
  auto a = leaf({3, 4}, rng), b = leaf({4, 2}, rng), c = leaf({3, 4}, rng);
  auto w = leaf({5, 4}, rng), bias = leaf({5}, rng);
  Tensor r1 = testing::random_tensor({3, 2}, rng), r2 = testing::random_tensor({3, 5}, rng);
  auto f = [&] {
    auto m = ops::matmul(ops::elu(ops::add(a, ops::scale(c, 0.5))), b);
    auto l = ops::linear(ops::leaky_relu(ops::sub(a, c), 0.2), w, bias);
    return ops::add(ops::sum(ops::mul(m, Var(r1))), ops::sum(ops::mul(ops::relu(l), Var(r2))));
  };
  auto res = gradcheck(f, {{"a", a}, {"b", b}, {"c", c}, {"w", w}, {"bias", bias}});
  INFO(res.worst, " analytic ", res.analytic, " numeric ", res.numeric);
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("batched products and softmax pass gradcheck") {
  Rng rng(12);
  auto a = leaf({2, 3, 4}, rng), b = leaf({2, 4, 3}, rng), c = leaf({2, 5, 4}, rng);
  Tensor mask({3, 3}, {1, 1, 0, 1, 1, 0, 0, 0, 1});
  auto x = leaf({3, 3}, rng);
  auto f = [&] {
    Rng p(1);
    auto s = ops::softmax_rows(ops::bmm(a, b));
    auto t = ops::bmm_nt(s, ops::reshape(ops::slice_cols(ops::reshape(c, {10, 4}), 0, 3), {2, 5, 3}));
    auto m = ops::masked_softmax_rows(x, mask);
    return ops::add(testing::probe(t, p), testing::probe(m, p));
  };
  auto res = gradcheck(f, {{"a", a}, {"b", b}, {"c", c}, {"x", x}});
  INFO(res.worst);
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("masked softmax zeroes entries outside the mask") {
  Var x(Tensor({2, 3}, {5.0, -1.0, 2.0, 0.0, 0.0, 0.0}));
  Tensor mask({2, 3}, {1, 0, 1, 0, 1, 1});
  auto y = ops::masked_softmax_rows(x, mask).value();
  CHECK(y.at(0, 1) == 0.0);
  CHECK(y.at(1, 0) == 0.0);
  CHECK(y.at(0, 0) + y.at(0, 2) == doctest::Approx(1.0));
  CHECK(y.at(1, 1) == doctest::Approx(0.5));
  CHECK_THROWS_AS(ops::masked_softmax_rows(x, Tensor({2, 3}, {0, 0, 0, 1, 1, 1})), NumericalError);
}

TEST_CASE("conv, group norm and pooling pass gradcheck") {
  Rng rng(13);
  auto x = leaf({2, 2, 5, 4}, rng), w = leaf({4, 2, 3, 3}, rng, 0.5), bias = leaf({4}, rng);
  auto g = leaf({4}, rng), beta = leaf({4}, rng);
  auto f = [&] {
    Rng p(2);
    auto y = ops::group_norm(ops::conv2d(x, w, bias, 2, 1), g, beta, 2);
    return ops::add(testing::probe(ops::global_avg_pool(y), p), testing::probe(ops::stripe_pool(y, 2), p));
  };
  auto res = gradcheck(f, {{"x", x}, {"w", w}, {"bias", bias}, {"gamma", g}, {"beta", beta}});
  INFO(res.worst);
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("conv output size follows same padding") {
  Var x(Tensor({1, 1, 9, 5}));
  Var w(Tensor({2, 1, 3, 3})), b(Tensor({2}));
  CHECK(ops::conv2d(x, w, b, 2, 1).shape() == Shape{1, 2, 5, 3});
  CHECK(ops::conv2d(x, w, b, 1, 1).shape() == Shape{1, 2, 9, 5});
}

TEST_CASE("batch norm passes gradcheck in training mode") {
  Rng rng(14);
  auto x = leaf({5, 3}, rng), g = leaf({3}, rng), beta = leaf({3}, rng);
  Tensor rm({3}), rv({3}, 1.0);
  auto f = [&] {
    Rng p(3);
    return testing::probe(ops::batch_norm(x, g, beta, rm, rv, true), p);
  };
  auto res = gradcheck(f, {{"x", x}, {"gamma", g}, {"beta", beta}});
  INFO(res.worst);
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("batch norm eval uses running statistics") {
  Var x(Tensor({2, 1}, {3.0, 5.0}));
  Var g(Tensor({1}, 2.0)), b(Tensor({1}, 1.0));
  Tensor rm({1}, 1.0), rv({1}, 4.0);
  auto y = ops::batch_norm(x, g, b, rm, rv, false, 0.1, 0.0).value();
  CHECK(y[0] == doctest::Approx(3.0));
  CHECK(y[1] == doctest::Approx(5.0));
  CHECK(rm[0] == 1.0);
}

TEST_CASE("batch norm updates running statistics in training") {
  Var x(Tensor({2, 1}, {1.0, 3.0}));
  Var g(Tensor({1}, 1.0)), b(Tensor({1}, 0.0));
  Tensor rm({1}, 0.0), rv({1}, 1.0);
  ops::batch_norm(x, g, b, rm, rv, true);
  CHECK(rm[0] == doctest::Approx(0.2));
  CHECK(rv[0] == doctest::Approx(0.9 + 0.1 * 2.0));  // unbiased variance 2
}

TEST_CASE("cross entropy, routing and part sums pass gradcheck") {
  Rng rng(15);
  auto logits = leaf({4, 3}, rng), parts = leaf({3, 2, 4}, rng), w = leaf({2}, rng);
  auto r1 = leaf({2, 2}, rng), r2 = leaf({1, 2}, rng);
  std::vector<int> labels{0, 2, 1, 2};
  auto f = [&] {
    Rng p(4);
    auto merged = ops::merge_rows({r1, r2}, {{2, 0}, {1}}, 3);
    auto picked = ops::index_rows(merged, std::vector<Index>{2, 2, 0});
    auto ce = ops::cross_entropy(logits, labels);
    auto wp = testing::probe(ops::weighted_part_sum(parts, w), p);
    return ops::add(ops::add(ce, wp), testing::probe(ops::concat_cols({picked, ops::scale(picked, 2.0)}), p));
  };
  auto res = gradcheck(f, {{"logits", logits}, {"parts", parts}, {"w", w}, {"r1", r1}, {"r2", r2}});
  INFO(res.worst);
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("outer sum passes gradcheck") {
  Rng rng(16);
  auto s = leaf({4}, rng), t = leaf({4}, rng);
  auto f = [&] {
    Rng p(5);
    return testing::probe(ops::outer_sum(s, t), p);
  };
  CHECK(gradcheck(f, {{"s", s}, {"t", t}}).max_rel_error < 1e-4);
}

TEST_CASE("cross entropy rejects labels out of range") {
  Var logits(Tensor({1, 2}));
  std::vector<int> bad{2};
  CHECK_THROWS_AS(ops::cross_entropy(logits, bad), ContractError);
}

TEST_CASE("stripe heights follow the remainder rule") {
  CHECK(ops::stripe_heights(6, 3) == std::vector<Index>{2, 2, 2});
  CHECK(ops::stripe_heights(7, 3) == std::vector<Index>{3, 2, 2});
  CHECK_THROWS_AS(ops::stripe_heights(2, 3), ConfigError);
}

TEST_CASE("checkpoint round trip and corruption") {
  const auto dir = std::filesystem::temp_directory_path() / "ddag_core_ckpt";
  std::filesystem::create_directories(dir);
  Tensor a({2, 3}, {1, 2, 3, 4, 5, 6.5}), b({1}, {-0.25});
  save_checkpoint(dir / "x.ddag", {{"epoch", 3}}, {{"a", &a}, {"b", &b}});
  auto ck = load_checkpoint(dir / "x.ddag");
  CHECK(ck.header.at("epoch") == 3);
  CHECK(max_abs_diff(ck.tensor("a"), a) == 0.0);
  CHECK(ck.tensor("b").shape() == Shape{1});
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ddag"), IoError);
  {
    std::ofstream os(dir / "junk.ddag");
    os << "not a checkpoint at all";
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "junk.ddag"), FormatError);
}

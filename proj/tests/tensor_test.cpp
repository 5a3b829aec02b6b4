// tests/tensor_test.cpp

// Copyright 2026  The mfcca authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>

#include "doctest.h"
#include "mfcca/graph.hpp"
#include "mfcca/rng.hpp"
#include "mfcca/tensor.hpp"
#include "oracles.hpp"

using namespace mfcca;

namespace {

Value leaf_of(Graph& g, Tensor t) { return g.leaf(std::move(t), false); }

}  // namespace

TEST_CASE("tensor shape and data invariants") {
  Tensor t({2, 3});
  CHECK(t.size() == 6);
  CHECK(t.rank() == 2);
  t(1, 2) = 5.0;
  CHECK(t[5] == 5.0);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
  CHECK(Tensor::scalar(3.0).rank() == 0);
  CHECK(Tensor::scalar(3.0).size() == 1);
}

TEST_CASE("matmul identity and hand-checked cases") {
  Graph g;
  Value id = leaf_of(g, Tensor({2, 2}, {1, 0, 0, 1}));
  Value m = leaf_of(g, Tensor({2, 2}, {3, 4, 5, 6}));
  Tensor out = matmul(id, m).val();
  CHECK(out(0, 0) == 3.0);
  CHECK(out(0, 1) == 4.0);
  CHECK(out(1, 0) == 5.0);
  CHECK(out(1, 1) == 6.0);

  Value a = leaf_of(g, Tensor({1, 2}, {1, 2}));
  Value b = leaf_of(g, Tensor({2, 1}, {3, 4}));
  CHECK(matmul(a, b).val()[0] == 11.0);
}

TEST_CASE("matmul matches triple-loop reference within 1e-12") {
  Rng rng(7);
  for (int rep = 0; rep < 8; ++rep) {
    Tensor a = oracle::random_tensor({3, 4}, rng);
    Tensor b = oracle::random_tensor({4, 2}, rng);
    Graph g;
    Tensor got = matmul(leaf_of(g, a), leaf_of(g, b)).val();
    Tensor want = oracle::matmul_naive(a, b);
    CHECK(max_abs_diff(got, want) <= 1e-12);
  }
}

TEST_CASE("matmul broadcasts batch prefixes") {
  Rng rng(8);
  Tensor a = oracle::random_tensor({3, 2, 4}, rng);  // batch 3
  Tensor b = oracle::random_tensor({4, 5}, rng);     // no batch
  Graph g;
  Tensor got = matmul(leaf_of(g, a), leaf_of(g, b)).val();
  CHECK(got.shape() == std::vector<std::size_t>{3, 2, 5});
  for (std::size_t e = 0; e < 3; ++e) {
    Tensor ae({2, 4});
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 4; ++j) ae(i, j) = a(e, i, j);
    Tensor want = oracle::matmul_naive(ae, b);
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 5; ++j)
        CHECK(std::abs(got(e, i, j) - want(i, j)) <= 1e-12);
  }
}

TEST_CASE("matmul rejects shape mismatch naming both shapes") {
  Graph g;
  Value a = leaf_of(g, Tensor({2, 3}));
  Value b = leaf_of(g, Tensor({4, 2}));
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2, 3]") != std::string::npos);
    CHECK(msg.find("[4, 2]") != std::string::npos);
  }
}

TEST_CASE("softmax basic cases") {
  Graph g;
  Tensor out = softmax_lastdim(leaf_of(g, Tensor({2}, {0, 0}))).val();
  CHECK(out[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(out[1] == doctest::Approx(0.5).epsilon(1e-12));

  Tensor single = softmax_lastdim(leaf_of(g, Tensor({1}, {42.0}))).val();
  CHECK(single[0] == 1.0);

  CHECK_THROWS_AS(softmax_lastdim(leaf_of(g, Tensor({2, 0}))), DimensionError);
}

TEST_CASE("softmax large magnitudes stay finite and match shifted-exponent oracle") {
  Graph g;
  Tensor out = softmax_lastdim(leaf_of(g, Tensor({2}, {1000.0, 0.0}))).val();
  CHECK(out[0] == 1.0);
  CHECK(out[1] == 0.0);  // underflow accepted, never floored

  Rng rng(11);
  for (int rep = 0; rep < 6; ++rep) {
    std::vector<double> row(5);
    for (double& v : row) v = rng.uniform(-1e3, 1e3);
    Tensor got = softmax_lastdim(leaf_of(g, Tensor({5}, row))).val();
    std::vector<double> want = oracle::softmax_row(row);
    double sum = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
      CHECK(std::abs(got[i] - want[i]) <= 1e-12);
      CHECK(got[i] >= 0.0);
      sum += got[i];
    }
    CHECK(std::abs(sum - 1.0) <= 1e-9);
  }
}

TEST_CASE("conv2d identity, zero, and nested-loop oracle cases") {
  Graph g;
  SUBCASE("1x1 unit kernel is identity") {
    Rng rng(3);
    Tensor x = oracle::random_tensor({1, 4, 3}, rng);
    Tensor k({1, 1, 1, 1}, {1.0});
    Tensor out = conv2d(leaf_of(g, x), leaf_of(g, k), leaf_of(g, Tensor({1}))).val();
    CHECK(max_abs_diff(out, x) == 0.0);
  }
  SUBCASE("all-zero input with zero bias stays zero") {
    Tensor out = conv2d(leaf_of(g, Tensor({2, 3, 3})), leaf_of(g, Tensor({3, 2, 3, 3})),
                        leaf_of(g, Tensor({3})))
                     .val();
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == 0.0);
  }
  SUBCASE("random case equals 6-nested-loop evaluation within 1e-12") {
    Rng rng(4);
    for (int rep = 0; rep < 4; ++rep) {
      Tensor x = oracle::random_tensor({2, 5, 4}, rng);
      Tensor k = oracle::random_tensor({3, 2, 3, 3}, rng);
      Tensor b = oracle::random_tensor({3}, rng);
      Tensor got = conv2d(leaf_of(g, x), leaf_of(g, k), leaf_of(g, b)).val();
      CHECK(max_abs_diff(got, oracle::conv2d_naive(x, k, b)) <= 1e-12);
    }
  }
  SUBCASE("input channel mismatch raises dimension error") {
    CHECK_THROWS_AS(conv2d(leaf_of(g, Tensor({2, 3, 3})), leaf_of(g, Tensor({1, 3, 3, 3})),
                           leaf_of(g, Tensor({1}))),
                    DimensionError);
  }
  SUBCASE("even kernel extent rejected") {
    CHECK_THROWS_AS(conv2d(leaf_of(g, Tensor({1, 3, 3})), leaf_of(g, Tensor({1, 1, 2, 3})),
                           leaf_of(g, Tensor({1}))),
                    DimensionError);
  }
}

TEST_CASE("supporting ops: layer_norm, swish, glu, concat, permute, zero_pad, embedding") {
  Graph g;
  Rng rng(5);

  SUBCASE("layer_norm rows have zero mean and unit variance under unit gain") {
    Tensor x = oracle::random_tensor({3, 8}, rng);
    Tensor out = layer_norm_lastdim(leaf_of(g, x), leaf_of(g, Tensor::filled({8}, 1.0)),
                                    leaf_of(g, Tensor({8})))
                     .val();
    for (std::size_t r = 0; r < 3; ++r) {
      double mu = 0.0, var = 0.0;
      for (std::size_t j = 0; j < 8; ++j) mu += out(r, j);
      mu /= 8.0;
      for (std::size_t j = 0; j < 8; ++j) var += (out(r, j) - mu) * (out(r, j) - mu);
      var /= 8.0;
      CHECK(std::abs(mu) < 1e-12);
      CHECK(var == doctest::Approx(1.0).epsilon(1e-4));  // eps=1e-5 shrinks variance slightly
    }
  }

  SUBCASE("swish fixes") {
    Tensor out = swish(leaf_of(g, Tensor({3}, {0.0, 100.0, -100.0}))).val();
    CHECK(out[0] == 0.0);
    CHECK(out[1] == doctest::Approx(100.0).epsilon(1e-12));
    CHECK(std::abs(out[2]) < 1e-40);
  }

  SUBCASE("glu halves and gates") {
    Tensor x({1, 4}, {2.0, 3.0, 0.0, 100.0});
    Tensor out = glu(leaf_of(g, x), 1).val();
    CHECK(out.shape() == std::vector<std::size_t>{1, 2});
    CHECK(out(0, 0) == doctest::Approx(1.0).epsilon(1e-12));   // 2 * sigmoid(0)
    CHECK(out(0, 1) == doctest::Approx(3.0).epsilon(1e-12));   // 3 * sigmoid(100)
    CHECK_THROWS_AS(glu(leaf_of(g, Tensor({1, 3})), 1), DimensionError);
  }

  SUBCASE("concat and permute round structure") {
    Tensor a = oracle::random_tensor({2, 3}, rng);
    Tensor b = oracle::random_tensor({1, 3}, rng);
    Tensor cat = concat({leaf_of(g, a), leaf_of(g, b)}, 0).val();
    CHECK(cat.shape() == std::vector<std::size_t>{3, 3});
    CHECK(cat(2, 1) == b(0, 1));

    Tensor x = oracle::random_tensor({2, 3, 4}, rng);
    Tensor p = permute(leaf_of(g, x), {2, 0, 1}).val();
    CHECK(p.shape() == std::vector<std::size_t>{4, 2, 3});
    CHECK(p(3, 1, 2) == x(1, 2, 3));
  }

  SUBCASE("zero_pad and slice invert") {
    Tensor x = oracle::random_tensor({2, 3}, rng);
    Value padded = zero_pad(leaf_of(g, x), 0, 1, 2);
    CHECK(padded.val().shape() == std::vector<std::size_t>{5, 3});
    CHECK(padded.val()(0, 0) == 0.0);
    CHECK(padded.val()(4, 2) == 0.0);
    Tensor back = slice(padded, 0, 1, 2).val();
    CHECK(max_abs_diff(back, x) == 0.0);
  }

  SUBCASE("embedding lookup selects rows and validates ids") {
    Tensor table = oracle::random_tensor({5, 3}, rng);
    Tensor out = embedding_lookup(leaf_of(g, table), {4, 0, 4}).val();
    CHECK(out.shape() == std::vector<std::size_t>{3, 3});
    CHECK(out(0, 1) == table(4, 1));
    CHECK(out(1, 2) == table(0, 2));
    CHECK_THROWS_AS(embedding_lookup(leaf_of(g, table), {5}), ContractError);
  }
}

TEST_CASE("operations are deterministic bit-for-bit") {
  Rng rng(9);
  Tensor a = oracle::random_tensor({4, 4}, rng);
  Tensor b = oracle::random_tensor({4, 4}, rng);
  Tensor first, second;
  {
    Graph g;
    first = swish(matmul(leaf_of(g, a), softmax_lastdim(leaf_of(g, b)))).val();
  }
  {
    Graph g;
    second = swish(matmul(leaf_of(g, a), softmax_lastdim(leaf_of(g, b)))).val();
  }
  for (std::size_t i = 0; i < first.size(); ++i) CHECK(first[i] == second[i]);
}

TEST_CASE("non-finite results are rejected") {
  Graph g;
  Value big = leaf_of(g, Tensor({1}, {1e308}));
  CHECK_THROWS_AS(mul(big, big), NumericError);
}

TEST_CASE("rng determinism and child streams") {
  Rng a(123), b(123);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c(123);
  Rng child0 = c.child(0), child1 = c.child(1);
  CHECK(child0.next_u64() != child1.next_u64());
  // child derivation ignores parent draw position
  Rng d(123);
  d.next_u64();
  CHECK(d.child(0).next_u64() == Rng(123).child(0).next_u64());
  // uniform within range
  Rng e(7);
  for (int i = 0; i < 1000; ++i) {
    double v = e.uniform();
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
  }
}

// tests/masking_test.cpp

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
#include "mfcca/masking.hpp"
#include "oracles.hpp"

using namespace mfcca;

TEST_CASE("p=0 never masks") {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    MaskPlan plan = sample_mask(MaskPolicy{0.0}, 8, rng);
    CHECK_FALSE(plan.applied);
    CHECK(plan.masked.empty());
  }
}

TEST_CASE("p=1 with C=2 always masks exactly one channel") {
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    MaskPlan plan = sample_mask(MaskPolicy{1.0}, 2, rng);
    CHECK(plan.applied);
    CHECK(plan.masked.size() == 1);
    CHECK(plan.masked[0] < 2);
  }
}

TEST_CASE("monte carlo statistics at p=0.2, C=8 over 10000 draws") {
  Rng rng(20260809);
  const std::size_t n = 10000;
  std::size_t applied = 0;
  std::vector<std::size_t> m_histogram(9, 0);
  for (std::size_t i = 0; i < n; ++i) {
    MaskPlan plan = sample_mask(MaskPolicy{0.2}, 8, rng);
    if (!plan.applied) continue;
    ++applied;
    CHECK(plan.masked.size() >= 1);
    CHECK(plan.masked.size() <= 7);  // m = C never occurs
    ++m_histogram[plan.masked.size()];
  }
  const double applied_rate = static_cast<double>(applied) / static_cast<double>(n);
  CHECK(std::abs(applied_rate - 0.2) <= 0.02);
  CHECK(m_histogram[8] == 0);
  for (std::size_t m = 1; m <= 7; ++m) {
    const double bin = static_cast<double>(m_histogram[m]) / static_cast<double>(applied);
    CHECK(std::abs(bin - 1.0 / 7.0) <= 0.02);
  }
}

TEST_CASE("masked subsets are uniform over channels") {
  Rng rng(5);
  std::vector<std::size_t> hits(8, 0);
  std::size_t total = 0;
  for (int i = 0; i < 20000; ++i) {
    MaskPlan plan = sample_mask(MaskPolicy{1.0}, 8, rng);
    for (std::size_t c : plan.masked) ++hits[c];
    total += plan.masked.size();
  }
  for (std::size_t c = 0; c < 8; ++c) {
    const double share = static_cast<double>(hits[c]) / static_cast<double>(total);
    CHECK(std::abs(share - 1.0 / 8.0) <= 0.01);
  }
}

TEST_CASE("contract errors") {
  Rng rng(6);
  CHECK_THROWS_AS(sample_mask(MaskPolicy{0.5}, 1, rng), ContractError);
  CHECK_THROWS_AS(sample_mask(MaskPolicy{1.5}, 4, rng), ContractError);
  MaskPlan bad;
  bad.applied = true;
  bad.masked = {5};
  CHECK_THROWS_AS(apply_mask(Tensor({2, 2, 2}), bad), ContractError);
}

TEST_CASE("apply_mask zeroes planned channels, copies the rest bit-identically") {
  Rng rng(7);
  Tensor x = oracle::random_tensor({2, 3, 4}, rng);
  MaskPlan plan;
  plan.applied = true;
  plan.masked = {0};
  Tensor out = apply_mask(x, plan);
  for (std::size_t i = 0; i < 12; ++i) {
    CHECK(out[i] == 0.0);
    CHECK(out[12 + i] == x[12 + i]);
  }
  // input unchanged, idempotent, empty plan is identity
  CHECK(x[0] != 0.0);
  CHECK(max_abs_diff(apply_mask(out, plan), out) == 0.0);
  Tensor same = apply_mask(x, MaskPlan{});
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(same[i] == x[i]);
}

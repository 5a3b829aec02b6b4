// tests/grad_test.cpp
//
// Every primitive with a recorded backward rule is checked against central
// differences on several random small shapes.

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
#include "mfcca/attention.hpp"
#include "mfcca/gradcheck.hpp"
#include "mfcca/graph.hpp"
#include "oracles.hpp"

using namespace mfcca;

namespace {

// five seeded repetitions per primitive
void check_primitive(const char* name, const BuildFn& build,
                     const std::function<std::vector<Tensor>(Rng&)>& make_inputs) {
  for (std::uint64_t rep = 0; rep < 5; ++rep) {
    Rng rng(1000 * rep + 17);
    std::vector<Tensor> inputs = make_inputs(rng);
    const double err = composite_grad_error(build, inputs, 555 + rep);
    INFO(name << " rep " << rep << " max rel err " << err);
    CHECK(err <= kGradCheckTolerance);
  }
}

std::vector<std::size_t> random_small_shape(Rng& rng, std::size_t max_rank = 3) {
  std::size_t rank = 1 + rng.below(max_rank);
  std::vector<std::size_t> shape(rank);
  for (auto& d : shape) d = 1 + rng.below(4);
  return shape;
}

}  // namespace

TEST_CASE("backward gives ones for sum and 2x for sum of squares") {
  Graph g;
  Tensor x({2, 3}, {1, -2, 3, 0.5, 4, -1});
  Value xv = g.leaf(x, true);
  g.backward(sum_all(xv));
  Tensor grad = g.gradient(xv);
  for (std::size_t i = 0; i < grad.size(); ++i) CHECK(grad[i] == 1.0);

  Graph g2;
  Value y = g2.leaf(Tensor({2}, {1, 2}), true);
  g2.backward(sum_all(mul(y, y)));
  Tensor gy = g2.gradient(y);
  CHECK(gy[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(gy[1] == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("backward rejects non-scalar loss and zeroes unreachable leaves") {
  Graph g;
  Value x = g.leaf(Tensor({2}, {1, 2}), true);
  Value unused = g.leaf(Tensor({3}, {1, 2, 3}), true);
  CHECK_THROWS_AS(g.backward(x), ContractError);
  g.backward(sum_all(x));
  Tensor gu = g.gradient(unused);
  CHECK(gu.shape() == std::vector<std::size_t>{3});
  for (std::size_t i = 0; i < gu.size(); ++i) CHECK(gu[i] == 0.0);
}

TEST_CASE("finite_difference basics") {
  Tensor x({2}, {1, 2});
  Tensor ones = finite_difference([](const Tensor& t) {
    double s = 0.0;
    for (double v : t.vec()) s += v;
    return s;
  }, x);
  CHECK(std::abs(ones[0] - 1.0) <= 1e-10);
  CHECK(std::abs(ones[1] - 1.0) <= 1e-10);

  Tensor sq = finite_difference([](const Tensor& t) {
    double s = 0.0;
    for (double v : t.vec()) s += v * v;
    return s;
  }, x);
  CHECK(std::abs(sq[0] - 2.0) <= 1e-6);
  CHECK(std::abs(sq[1] - 4.0) <= 1e-6);

  CHECK_THROWS_AS(finite_difference([](const Tensor&) {
    return std::numeric_limits<double>::infinity();
  }, x), NumericError);
}

TEST_CASE("finite_difference matches analytic softmax jacobian-vector product") {
  Rng rng(21);
  Tensor x = oracle::random_tensor({4}, rng);
  Tensor a = oracle::random_tensor({4}, rng);  // fixed dot vector
  auto f = [&](const Tensor& t) {
    std::vector<double> p = oracle::softmax_row(t.vec());
    double s = 0.0;
    for (std::size_t i = 0; i < 4; ++i) s += p[i] * a[i];
    return s;
  };
  Tensor numeric = finite_difference(f, x);
  // analytic: J^T a with J_ij = p_i (delta_ij - p_j)
  std::vector<double> p = oracle::softmax_row(x.vec());
  double pa = 0.0;
  for (std::size_t i = 0; i < 4; ++i) pa += p[i] * a[i];
  for (std::size_t j = 0; j < 4; ++j) {
    const double analytic = p[j] * (a[j] - pa);
    CHECK(std::abs(numeric[j] - analytic) <= 1e-5);
  }
}

TEST_CASE("primitive backward rules agree with central differences") {
  check_primitive("add", [](Graph&, const std::vector<Value>& v) { return add(v[0], v[1]); },
                  [](Rng& rng) {
                    auto s = random_small_shape(rng);
                    return std::vector<Tensor>{oracle::random_tensor(s, rng),
                                               oracle::random_tensor(s, rng)};
                  });
  check_primitive("sub", [](Graph&, const std::vector<Value>& v) { return sub(v[0], v[1]); },
                  [](Rng& rng) {
                    auto s = random_small_shape(rng);
                    return std::vector<Tensor>{oracle::random_tensor(s, rng),
                                               oracle::random_tensor(s, rng)};
                  });
  check_primitive("mul", [](Graph&, const std::vector<Value>& v) { return mul(v[0], v[1]); },
                  [](Rng& rng) {
                    auto s = random_small_shape(rng);
                    return std::vector<Tensor>{oracle::random_tensor(s, rng),
                                               oracle::random_tensor(s, rng)};
                  });
  check_primitive("scale",
                  [](Graph&, const std::vector<Value>& v) { return scale(v[0], -1.7); },
                  [](Rng& rng) {
                    return std::vector<Tensor>{oracle::random_tensor(random_small_shape(rng), rng)};
                  });
  check_primitive("add_bias",
                  [](Graph&, const std::vector<Value>& v) { return add_bias(v[0], v[1]); },
                  [](Rng& rng) {
                    std::size_t n = 1 + rng.below(5);
                    return std::vector<Tensor>{oracle::random_tensor({2 + rng.below(3), n}, rng),
                                               oracle::random_tensor({n}, rng)};
                  });
  check_primitive("mul_vec_lastdim",
                  [](Graph&, const std::vector<Value>& v) { return mul_vec_lastdim(v[0], v[1]); },
                  [](Rng& rng) {
                    std::size_t n = 1 + rng.below(5);
                    return std::vector<Tensor>{oracle::random_tensor({2 + rng.below(3), n}, rng),
                                               oracle::random_tensor({n}, rng)};
                  });
  check_primitive("matmul",
                  [](Graph&, const std::vector<Value>& v) { return matmul(v[0], v[1]); },
                  [](Rng& rng) {
                    std::size_t m = 1 + rng.below(4), k = 1 + rng.below(4), n = 1 + rng.below(4);
                    return std::vector<Tensor>{oracle::random_tensor({m, k}, rng),
                                               oracle::random_tensor({k, n}, rng)};
                  });
  check_primitive("matmul_batched",
                  [](Graph&, const std::vector<Value>& v) { return matmul(v[0], v[1]); },
                  [](Rng& rng) {
                    std::size_t b = 2 + rng.below(2), m = 1 + rng.below(3), k = 1 + rng.below(3),
                                n = 1 + rng.below(3);
                    return std::vector<Tensor>{oracle::random_tensor({b, m, k}, rng),
                                               oracle::random_tensor({k, n}, rng)};
                  });
  check_primitive("softmax_lastdim",
                  [](Graph&, const std::vector<Value>& v) { return softmax_lastdim(v[0]); },
                  [](Rng& rng) {
                    return std::vector<Tensor>{oracle::random_tensor(random_small_shape(rng), rng)};
                  });
  check_primitive("log_softmax_lastdim",
                  [](Graph&, const std::vector<Value>& v) { return log_softmax_lastdim(v[0]); },
                  [](Rng& rng) {
                    return std::vector<Tensor>{oracle::random_tensor(random_small_shape(rng), rng)};
                  });
  check_primitive("conv2d",
                  [](Graph&, const std::vector<Value>& v) { return conv2d(v[0], v[1], v[2]); },
                  [](Rng& rng) {
                    std::size_t cin = 1 + rng.below(2), cout = 1 + rng.below(2);
                    return std::vector<Tensor>{oracle::random_tensor({cin, 4, 3}, rng),
                                               oracle::random_tensor({cout, cin, 3, 3}, rng),
                                               oracle::random_tensor({cout}, rng)};
                  });
  check_primitive("layer_norm",
                  [](Graph&, const std::vector<Value>& v) {
                    return layer_norm_lastdim(v[0], v[1], v[2]);
                  },
                  [](Rng& rng) {
                    std::size_t n = 2 + rng.below(5);
                    return std::vector<Tensor>{oracle::random_tensor({3, n}, rng),
                                               oracle::random_tensor({n}, rng),
                                               oracle::random_tensor({n}, rng)};
                  });
  check_primitive("swish", [](Graph&, const std::vector<Value>& v) { return swish(v[0]); },
                  [](Rng& rng) {
                    return std::vector<Tensor>{oracle::random_tensor(random_small_shape(rng), rng)};
                  });
  check_primitive("sigmoid", [](Graph&, const std::vector<Value>& v) { return sigmoid(v[0]); },
                  [](Rng& rng) {
                    return std::vector<Tensor>{oracle::random_tensor(random_small_shape(rng), rng)};
                  });
  check_primitive("glu", [](Graph&, const std::vector<Value>& v) { return glu(v[0], 1); },
                  [](Rng& rng) {
                    return std::vector<Tensor>{oracle::random_tensor({3, 2 * (1 + rng.below(3))},
                                                                     rng)};
                  });
  check_primitive("concat",
                  [](Graph&, const std::vector<Value>& v) {
                    return concat({v[0], v[1]}, 0);
                  },
                  [](Rng& rng) {
                    std::size_t n = 1 + rng.below(4);
                    return std::vector<Tensor>{oracle::random_tensor({1 + rng.below(3), n}, rng),
                                               oracle::random_tensor({1 + rng.below(3), n}, rng)};
                  });
  check_primitive("permute",
                  [](Graph&, const std::vector<Value>& v) { return permute(v[0], {2, 0, 1}); },
                  [](Rng& rng) {
                    return std::vector<Tensor>{
                        oracle::random_tensor({1 + rng.below(3), 1 + rng.below(3), 2}, rng)};
                  });
  check_primitive("zero_pad",
                  [](Graph&, const std::vector<Value>& v) { return zero_pad(v[0], 0, 1, 2); },
                  [](Rng& rng) {
                    return std::vector<Tensor>{oracle::random_tensor({2, 3}, rng)};
                  });
  check_primitive("slice",
                  [](Graph&, const std::vector<Value>& v) { return slice(v[0], 1, 1, 2); },
                  [](Rng& rng) {
                    return std::vector<Tensor>{oracle::random_tensor({2, 4}, rng)};
                  });
  check_primitive("reshape",
                  [](Graph&, const std::vector<Value>& v) { return reshape(v[0], {6}); },
                  [](Rng& rng) {
                    return std::vector<Tensor>{oracle::random_tensor({2, 3}, rng)};
                  });
  check_primitive("embedding_lookup",
                  [](Graph&, const std::vector<Value>& v) {
                    return embedding_lookup(v[0], {2, 0, 2, 1});
                  },
                  [](Rng& rng) {
                    return std::vector<Tensor>{oracle::random_tensor({3, 3}, rng)};
                  });
  check_primitive("add_const_2d",
                  [](Graph&, const std::vector<Value>& v) {
                    Tensor m({2, 3});
                    m(0, 1) = -0.5;
                    m(1, 2) = 2.0;
                    return add_const_2d(v[0], m);
                  },
                  [](Rng& rng) {
                    return std::vector<Tensor>{oracle::random_tensor({2, 2, 3}, rng)};
                  });
  check_primitive("leave_one_out_mean",
                  [](Graph&, const std::vector<Value>& v) { return leave_one_out_mean(v[0]); },
                  [](Rng& rng) {
                    return std::vector<Tensor>{
                        oracle::random_tensor({2 + rng.below(3), 2, 3}, rng)};
                  });
}

TEST_CASE("composite attention forward matches finite differences") {
  Rng prng(99);
  ParamStore store;
  init_attention_params(store, "attn", 2, 8, prng);
  Tensor x = oracle::random_tensor({5, 8}, prng);

  std::vector<Tensor> inputs{x};
  std::vector<std::string> names;
  for (const auto& [name, t] : store) {
    names.push_back(name);
    inputs.push_back(t);
  }
  auto build = [&names](Graph& g, const std::vector<Value>& v) {
    AttentionParams p;
    p.heads = 2;
    p.model_dim = 8;
    p.head_dim = 4;
    for (std::size_t i = 0; i < names.size(); ++i) {
      const std::string& n = names[i];
      Value val = v[i + 1];
      if (n == "attn.wq") p.wq = val;
      else if (n == "attn.wk") p.wk = val;
      else if (n == "attn.wv") p.wv = val;
      else if (n == "attn.bq") p.bq = val;
      else if (n == "attn.bk") p.bk = val;
      else if (n == "attn.bv") p.bv = val;
      else if (n == "attn.wo") p.wo = val;
      else if (n == "attn.bo") p.bo = val;
    }
    (void)g;
    return attention_core(v[0], v[0], p, nullptr, nullptr);
  };
  const double err = composite_grad_error(build, inputs, 7);
  CHECK(err <= kGradCheckTolerance);
}

TEST_CASE("binder returns one gradient per bound parameter name") {
  ParamStore store;
  store["w"] = Tensor({2}, {1.0, 2.0});
  store["unused"] = Tensor({3}, {1.0, 1.0, 1.0});
  Graph g;
  Binder bind(g, store, true);
  Value w = bind("w");
  Value unused = bind("unused");
  (void)unused;
  g.backward(sum_all(mul(w, w)));
  std::map<std::string, Tensor> grads = bind.gradients();
  REQUIRE(grads.size() == 2);
  CHECK(grads.at("w")[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(grads.at("w")[1] == doctest::Approx(4.0).epsilon(1e-12));
  // leaves off the loss path get zero gradients of their own shape
  CHECK(grads.at("unused").shape() == std::vector<std::size_t>{3});
  for (std::size_t i = 0; i < 3; ++i) CHECK(grads.at("unused")[i] == 0.0);
  CHECK_THROWS_AS(bind("missing"), ContractError);
}

TEST_CASE("backward sign-flip hook is detected by gradcheck") {
  testing::set_backward_sign_flip("swish");
  Rng rng(3);
  std::vector<Tensor> inputs{oracle::random_tensor({3, 3}, rng)};
  const double err = composite_grad_error(
      [](Graph&, const std::vector<Value>& v) { return swish(v[0]); }, inputs, 4);
  testing::set_backward_sign_flip("");
  CHECK(err > kGradCheckTolerance);
}

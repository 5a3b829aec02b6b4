// mfcca/gradcheck.cpp

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

#include "mfcca/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "mfcca/attention.hpp"
#include "mfcca/encoder.hpp"
#include "mfcca/model.hpp"
#include "mfcca/rng.hpp"
#include "mfcca/sot.hpp"

namespace mfcca {

namespace {

double eval_at(const ScalarFn& f, Tensor x, std::size_t coord, double value) {
  x[coord] = value;
  const double y = f(x);
  if (!std::isfinite(y)) {
    throw NumericError("finite_difference: function returned non-finite value");
  }
  return y;
}

}  // namespace

Tensor finite_difference(const ScalarFn& f, const Tensor& x, double eps) {
  Tensor grad(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    const double up = eval_at(f, x, i, x0 + eps);
    const double dn = eval_at(f, x, i, x0 - eps);
    grad[i] = (up - dn) / (2.0 * eps);
  }
  return grad;
}

Tensor finite_difference_at(const ScalarFn& f, const Tensor& x,
                            const std::vector<std::size_t>& coords, double eps) {
  Tensor grad(x.shape());
  for (std::size_t i : coords) {
    const double x0 = x[i];
    const double up = eval_at(f, x, i, x0 + eps);
    const double dn = eval_at(f, x, i, x0 - eps);
    grad[i] = (up - dn) / (2.0 * eps);
  }
  return grad;
}

double composite_grad_error(const BuildFn& build, const std::vector<Tensor>& inputs,
                            std::uint64_t readout_seed, double eps,
                            std::size_t max_coords_per_input) {
  // forward once to size the readout weights
  Tensor readout;
  {
    Graph g;
    std::vector<Value> leaves;
    leaves.reserve(inputs.size());
    for (const Tensor& t : inputs) leaves.push_back(g.leaf(t, false));
    const Tensor& out = build(g, leaves).val();
    Rng rng(readout_seed);
    readout = Tensor(out.shape());
    for (double& v : readout.vec()) v = rng.uniform(-1.0, 1.0);
  }

  // analytic gradients from one taped pass
  Graph g;
  std::vector<Value> leaves;
  leaves.reserve(inputs.size());
  for (const Tensor& t : inputs) leaves.push_back(g.leaf(t, true));
  Value loss = sum_all(mul_const(build(g, leaves), readout));
  g.backward(loss);

  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    ScalarFn f = [&, i](const Tensor& x) {
      Graph g2;
      std::vector<Value> ls;
      ls.reserve(inputs.size());
      for (std::size_t j = 0; j < inputs.size(); ++j) {
        ls.push_back(g2.leaf(j == i ? x : inputs[j], false));
      }
      return sum_all(mul_const(build(g2, ls), readout)).val()[0];
    };
    std::vector<std::size_t> coords;
    if (max_coords_per_input > 0 && inputs[i].size() > max_coords_per_input) {
      Rng rng(Rng::splitmix64(readout_seed) + i);
      for (std::size_t c = 0; c < max_coords_per_input; ++c) {
        coords.push_back(rng.below(inputs[i].size()));
      }
      std::sort(coords.begin(), coords.end());
      coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
    }
    Tensor numeric = coords.empty() ? finite_difference(f, inputs[i], eps)
                                    : finite_difference_at(f, inputs[i], coords, eps);
    worst = std::max(worst, gradient_rel_error(g.gradient(leaves[i]), numeric, coords));
  }
  return worst;
}

double store_grad_error(const std::function<Value(Graph&, Binder&)>& forward,
                        const ParamStore& store, std::uint64_t readout_seed,
                        std::size_t max_coords_per_param, double eps) {
  Tensor readout;
  {
    Graph g;
    Binder bind(g, store, false);
    const Tensor& out = forward(g, bind).val();
    Rng rng(readout_seed);
    readout = Tensor(out.shape());
    for (double& v : readout.vec()) v = rng.uniform(-1.0, 1.0);
  }

  Graph g;
  Binder bind(g, store, true);
  Value loss = sum_all(mul_const(forward(g, bind), readout));
  g.backward(loss);

  double worst = 0.0;
  std::size_t param_index = 0;
  for (const auto& [name, leaf] : bind.bound()) {
    const Tensor& base = store.at(name);
    ScalarFn f = [&](const Tensor& x) {
      ParamStore perturbed = store;
      perturbed[name] = x;
      Graph g2;
      Binder b2(g2, perturbed, false);
      return sum_all(mul_const(forward(g2, b2), readout)).val()[0];
    };
    std::vector<std::size_t> coords;
    if (max_coords_per_param > 0 && base.size() > max_coords_per_param) {
      Rng rng(Rng::splitmix64(readout_seed) + param_index);
      for (std::size_t c = 0; c < max_coords_per_param; ++c) coords.push_back(rng.below(base.size()));
      std::sort(coords.begin(), coords.end());
      coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
    }
    Tensor numeric = coords.empty() ? finite_difference(f, base, eps)
                                    : finite_difference_at(f, base, coords, eps);
    worst = std::max(worst, gradient_rel_error(g.gradient(leaf), numeric, coords));
    ++param_index;
  }
  return worst;
}

double gradient_rel_error(const Tensor& analytic, const Tensor& numeric,
                          const std::vector<std::size_t>& coords) {
  if (!analytic.same_shape(numeric)) {
    throw DimensionError("gradient_rel_error: shapes " + shape_str(analytic.shape()) + " vs " +
                         shape_str(numeric.shape()));
  }
  double worst = 0.0;
  auto consider = [&](std::size_t i) {
    const double denom = std::max(1.0, std::abs(numeric[i]));
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  };
  if (coords.empty()) {
    for (std::size_t i = 0; i < analytic.size(); ++i) consider(i);
  } else {
    for (std::size_t i : coords) consider(i);
  }
  return worst;
}

namespace {

Tensor rand_t(std::vector<std::size_t> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.vec()) v = rng.uniform(-1.0, 1.0);
  return t;
}

GradCheckRow primitive_row(const std::string& target, const BuildFn& build,
                           const std::function<std::vector<Tensor>(Rng&)>& make_inputs,
                           std::uint64_t seed) {
  GradCheckRow row;
  row.target = target;
  for (std::uint64_t rep = 0; rep < 5; ++rep) {  // five random small shapes each
    Rng rng(Rng::splitmix64(seed) + rep);
    std::vector<Tensor> inputs = make_inputs(rng);
    row.max_rel_err = std::max(row.max_rel_err,
                               composite_grad_error(build, inputs, seed * 31 + rep));
  }
  row.pass = row.max_rel_err <= kGradCheckTolerance;
  return row;
}

GradCheckRow store_row(const std::string& target,
                       const std::function<Value(Graph&, Binder&)>& forward,
                       const ParamStore& store, std::uint64_t seed, std::size_t coords) {
  GradCheckRow row;
  row.target = target;
  row.max_rel_err = store_grad_error(forward, store, seed, coords);
  row.pass = row.max_rel_err <= kGradCheckTolerance;
  return row;
}

// the parameter set of one attention block plus a [C,T,D] input
ParamStore attention_store(std::size_t heads, std::size_t dim, std::vector<std::size_t> xshape,
                           std::uint64_t seed) {
  ParamStore store;
  Rng rng(seed);
  init_attention_params(store, "a", heads, dim, rng);
  store["_input.x"] = rand_t(std::move(xshape), rng);
  return store;
}

AttentionParams bind_a(Binder& bind, std::size_t heads, std::size_t dim) {
  return bind_attention_params(bind, "a", heads, dim);
}

}  // namespace

std::vector<GradCheckRow> run_gradcheck_suite(std::uint64_t seed) {
  std::vector<GradCheckRow> rows;
  auto shape3 = [](Rng& rng) {
    std::vector<std::size_t> s(1 + rng.below(3));
    for (auto& d : s) d = 1 + rng.below(4);
    return s;
  };

  rows.push_back(primitive_row("prim.add",
      [](Graph&, const std::vector<Value>& v) { return add(v[0], v[1]); },
      [&](Rng& rng) {
        auto s = shape3(rng);
        return std::vector<Tensor>{rand_t(s, rng), rand_t(s, rng)};
      }, seed + 1));
  rows.push_back(primitive_row("prim.sub",
      [](Graph&, const std::vector<Value>& v) { return sub(v[0], v[1]); },
      [&](Rng& rng) {
        auto s = shape3(rng);
        return std::vector<Tensor>{rand_t(s, rng), rand_t(s, rng)};
      }, seed + 2));
  rows.push_back(primitive_row("prim.mul",
      [](Graph&, const std::vector<Value>& v) { return mul(v[0], v[1]); },
      [&](Rng& rng) {
        auto s = shape3(rng);
        return std::vector<Tensor>{rand_t(s, rng), rand_t(s, rng)};
      }, seed + 3));
  rows.push_back(primitive_row("prim.scale",
      [](Graph&, const std::vector<Value>& v) { return scale(v[0], 1.3); },
      [&](Rng& rng) { return std::vector<Tensor>{rand_t(shape3(rng), rng)}; }, seed + 4));
  rows.push_back(primitive_row("prim.add_bias",
      [](Graph&, const std::vector<Value>& v) { return add_bias(v[0], v[1]); },
      [&](Rng& rng) {
        std::size_t n = 1 + rng.below(4);
        return std::vector<Tensor>{rand_t({2 + rng.below(3), n}, rng), rand_t({n}, rng)};
      }, seed + 5));
  rows.push_back(primitive_row("prim.mul_vec_lastdim",
      [](Graph&, const std::vector<Value>& v) { return mul_vec_lastdim(v[0], v[1]); },
      [&](Rng& rng) {
        std::size_t n = 1 + rng.below(4);
        return std::vector<Tensor>{rand_t({2 + rng.below(3), n}, rng), rand_t({n}, rng)};
      }, seed + 6));
  rows.push_back(primitive_row("prim.matmul",
      [](Graph&, const std::vector<Value>& v) { return matmul(v[0], v[1]); },
      [&](Rng& rng) {
        std::size_t m = 1 + rng.below(3), k = 1 + rng.below(3), n = 1 + rng.below(3);
        return std::vector<Tensor>{rand_t({m, k}, rng), rand_t({k, n}, rng)};
      }, seed + 7));
  rows.push_back(primitive_row("prim.matmul_batched",
      [](Graph&, const std::vector<Value>& v) { return matmul(v[0], v[1]); },
      [&](Rng& rng) {
        std::size_t b = 2, m = 1 + rng.below(3), k = 1 + rng.below(3), n = 1 + rng.below(3);
        return std::vector<Tensor>{rand_t({b, m, k}, rng), rand_t({k, n}, rng)};
      }, seed + 8));
  rows.push_back(primitive_row("prim.softmax_lastdim",
      [](Graph&, const std::vector<Value>& v) { return softmax_lastdim(v[0]); },
      [&](Rng& rng) { return std::vector<Tensor>{rand_t(shape3(rng), rng)}; }, seed + 9));
  rows.push_back(primitive_row("prim.log_softmax_lastdim",
      [](Graph&, const std::vector<Value>& v) { return log_softmax_lastdim(v[0]); },
      [&](Rng& rng) { return std::vector<Tensor>{rand_t(shape3(rng), rng)}; }, seed + 10));
  rows.push_back(primitive_row("prim.conv2d",
      [](Graph&, const std::vector<Value>& v) { return conv2d(v[0], v[1], v[2]); },
      [&](Rng& rng) {
        std::size_t cin = 1 + rng.below(2), cout = 1 + rng.below(2);
        return std::vector<Tensor>{rand_t({cin, 3, 4}, rng), rand_t({cout, cin, 3, 3}, rng),
                                   rand_t({cout}, rng)};
      }, seed + 11));
  rows.push_back(primitive_row("prim.layer_norm",
      [](Graph&, const std::vector<Value>& v) { return layer_norm_lastdim(v[0], v[1], v[2]); },
      [&](Rng& rng) {
        std::size_t n = 2 + rng.below(4);
        return std::vector<Tensor>{rand_t({3, n}, rng), rand_t({n}, rng), rand_t({n}, rng)};
      }, seed + 12));
  rows.push_back(primitive_row("prim.swish",
      [](Graph&, const std::vector<Value>& v) { return swish(v[0]); },
      [&](Rng& rng) { return std::vector<Tensor>{rand_t(shape3(rng), rng)}; }, seed + 13));
  rows.push_back(primitive_row("prim.sigmoid",
      [](Graph&, const std::vector<Value>& v) { return sigmoid(v[0]); },
      [&](Rng& rng) { return std::vector<Tensor>{rand_t(shape3(rng), rng)}; }, seed + 14));
  rows.push_back(primitive_row("prim.glu",
      [](Graph&, const std::vector<Value>& v) { return glu(v[0], 1); },
      [&](Rng& rng) {
        return std::vector<Tensor>{rand_t({3, 2 * (1 + rng.below(3))}, rng)};
      }, seed + 15));
  rows.push_back(primitive_row("prim.concat",
      [](Graph&, const std::vector<Value>& v) { return concat({v[0], v[1]}, 0); },
      [&](Rng& rng) {
        std::size_t n = 1 + rng.below(3);
        return std::vector<Tensor>{rand_t({1 + rng.below(3), n}, rng),
                                   rand_t({1 + rng.below(3), n}, rng)};
      }, seed + 16));
  rows.push_back(primitive_row("prim.permute",
      [](Graph&, const std::vector<Value>& v) { return permute(v[0], {2, 0, 1}); },
      [&](Rng& rng) {
        return std::vector<Tensor>{rand_t({1 + rng.below(3), 2, 1 + rng.below(3)}, rng)};
      }, seed + 17));
  rows.push_back(primitive_row("prim.zero_pad",
      [](Graph&, const std::vector<Value>& v) { return zero_pad(v[0], 0, 1, 2); },
      [&](Rng& rng) { return std::vector<Tensor>{rand_t({2, 3}, rng)}; }, seed + 18));
  rows.push_back(primitive_row("prim.slice",
      [](Graph&, const std::vector<Value>& v) { return slice(v[0], 1, 1, 2); },
      [&](Rng& rng) { return std::vector<Tensor>{rand_t({2, 4}, rng)}; }, seed + 19));
  rows.push_back(primitive_row("prim.reshape",
      [](Graph&, const std::vector<Value>& v) { return reshape(v[0], {6}); },
      [&](Rng& rng) { return std::vector<Tensor>{rand_t({2, 3}, rng)}; }, seed + 20));
  rows.push_back(primitive_row("prim.embedding_lookup",
      [](Graph&, const std::vector<Value>& v) { return embedding_lookup(v[0], {2, 0, 1, 2}); },
      [&](Rng& rng) { return std::vector<Tensor>{rand_t({3, 3}, rng)}; }, seed + 21));
  rows.push_back(primitive_row("prim.add_const_2d",
      [](Graph&, const std::vector<Value>& v) {
        Tensor m({2, 3});
        m(0, 0) = 0.7;
        m(1, 2) = -0.4;
        return add_const_2d(v[0], m);
      },
      [&](Rng& rng) { return std::vector<Tensor>{rand_t({2, 2, 3}, rng)}; }, seed + 22));
  rows.push_back(primitive_row("prim.leave_one_out_mean",
      [](Graph&, const std::vector<Value>& v) { return leave_one_out_mean(v[0]); },
      [&](Rng& rng) {
        return std::vector<Tensor>{rand_t({2 + rng.below(3), 2, 2}, rng)};
      }, seed + 23));
  rows.push_back(primitive_row("prim.sum_all",
      [](Graph&, const std::vector<Value>& v) { return sum_all(v[0]); },
      [&](Rng& rng) { return std::vector<Tensor>{rand_t(shape3(rng), rng)}; }, seed + 24));

  // attention variants, gradients w.r.t. input and all projections
  {
    ParamStore s = attention_store(2, 6, {5, 6}, seed + 30);
    rows.push_back(store_row("attn.single_channel",
        [](Graph&, Binder& bind) {
          return single_channel_attention(bind("_input.x"), bind_a(bind, 2, 6)).first;
        }, s, seed + 30, 0));
  }
  {
    ParamStore s = attention_store(2, 6, {3, 4, 6}, seed + 31);
    rows.push_back(store_row("attn.flcca",
        [](Graph&, Binder& bind) {
          return flcca(bind("_input.x"), bind_a(bind, 2, 6)).first;
        }, s, seed + 31, 0));
  }
  {
    ParamStore s = attention_store(2, 6, {3, 4, 6}, seed + 32);
    rows.push_back(store_row("attn.clcca",
        [](Graph&, Binder& bind) {
          return clcca(bind("_input.x"), bind_a(bind, 2, 6)).first;
        }, s, seed + 32, 0));
  }
  {
    ParamStore s = attention_store(2, 6, {3, 4, 6}, seed + 33);
    rows.push_back(store_row("attn.mfcca",
        [](Graph&, Binder& bind) {
          return mfcca(bind("_input.x"), bind_a(bind, 2, 6), ContextConfig{1}).first;
        }, s, seed + 33, 0));
  }

  // encoder layer, fusion, stack+fusion
  EncoderConfig ec;
  ec.layers = 1;
  ec.model_dim = 6;
  ec.heads = 2;
  ec.ffn_dim = 8;
  ec.conv_kernel = 3;
  ec.input_dim = 4;
  ec.context_radius = 1;
  ec.fusion_channels = 2;
  {
    ParamStore s;
    Rng rng(seed + 40);
    init_encoder_params(s, "enc", ec, rng);
    s["_input.x"] = rand_t({2, 4, ec.model_dim}, rng);
    rows.push_back(store_row("enc.layer",
        [&ec](Graph&, Binder& bind) {
          EncoderStackParams p = bind_encoder_params(bind, "enc", ec);
          return encoder_layer(bind("_input.x"), p.layers[0], ContextConfig{ec.context_radius});
        }, s, seed + 40, 20));
  }
  {
    ParamStore s;
    Rng rng(seed + 41);
    init_fusion_params(s, "fusion", 2, rng);
    s["_input.x"] = rand_t({2, 4, 5}, rng);
    rows.push_back(store_row("fusion.conv",
        [](Graph&, Binder& bind) {
          FusionParams p = bind_fusion_params(bind, "fusion", 2);
          return conv_fusion(bind("_input.x"), p);
        }, s, seed + 41, 0));
  }
  {
    ParamStore s;
    Rng rng(seed + 42);
    init_encoder_params(s, "enc", ec, rng);
    init_fusion_params(s, "fusion", ec.fusion_channels, rng);
    s["_input.x"] = rand_t({2, 4, ec.input_dim}, rng);
    rows.push_back(store_row("enc.stack_fusion",
        [&ec](Graph&, Binder& bind) {
          EncoderStackParams p = bind_encoder_params(bind, "enc", ec);
          FusionParams f = bind_fusion_params(bind, "fusion", ec.fusion_channels);
          Value enc = encoder_stack(bind("_input.x"), p, ContextConfig{ec.context_radius});
          return conv_fusion(expand_channels(enc, ec.fusion_channels), f);
        }, s, seed + 42, 16));
  }

  // decoder and the training loss end to end
  DecoderSpec ds;
  ds.layers = 1;
  ds.heads = 2;
  ds.model_dim = 6;
  ds.ffn_dim = 8;
  ds.vocab = 7;
  {
    ParamStore s;
    Rng rng(seed + 50);
    init_decoder_params(s, "dec", ds, rng);
    s["_input.memory"] = rand_t({3, ds.model_dim}, rng);
    rows.push_back(store_row("dec.forward",
        [&ds](Graph&, Binder& bind) {
          DecoderParams p = bind_decoder_params(bind, "dec", ds);
          return decoder_forward(bind("_input.memory"), {1, 4, 5}, p);
        }, s, seed + 50, 16));
  }
  {
    ModelConfig mc;
    mc.enc_layers = 1;
    mc.model_dim = 6;
    mc.heads = 2;
    mc.ffn_dim = 8;
    mc.context_radius = 1;
    mc.conv_kernel = 3;
    mc.fusion_channels = 2;
    mc.dec_layers = 1;
    mc.input_dim = 4;
    mc.vocab = 7;
    mc.label_smoothing = 0.0;  // exactness for the oracle
    ParamStore s;
    init_model_params(s, mc, seed + 51);
    Rng rng(seed + 52);
    s["_input.x"] = rand_t({2, 4, mc.input_dim}, rng);
    rows.push_back(store_row("loss.sot",
        [&mc](Graph&, Binder& bind) {
          ModelForward m = bind_model(bind, mc);
          Value memory = model_memory(m, mc, bind("_input.x"));
          Value logits = decoder_forward(memory, {1, 4, 5, 6}, m.dec);
          return sot_loss(logits, {4, 5, 6, 2}, 0.0, 0);
        }, s, seed + 51, 12));
  }
  return rows;
}

}  // namespace mfcca

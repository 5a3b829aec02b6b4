// mfcca/attention.cpp

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

#include "mfcca/attention.hpp"

#include <cmath>
#include <cstring>

namespace mfcca {

namespace {

Tensor identity_matrix(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

void require_cthd(const Value& x, const char* op) {
  if (x.rank() != 3) {
    throw DimensionError(std::string(op) + ": expected [C,T,D], got " + shape_str(x.shape()));
  }
}

}  // namespace

void init_attention_params(ParamStore& store, const std::string& prefix, std::size_t heads,
                           std::size_t model_dim, Rng& rng) {
  if (heads == 0 || model_dim % heads != 0) {
    throw DimensionError("attention: model_dim " + std::to_string(model_dim) +
                         " not divisible by heads " + std::to_string(heads));
  }
  const std::size_t dh = model_dim / heads;
  store[prefix + ".wq"] = glorot_init({heads, model_dim, dh}, model_dim, dh, rng);
  store[prefix + ".wk"] = glorot_init({heads, model_dim, dh}, model_dim, dh, rng);
  store[prefix + ".wv"] = glorot_init({heads, model_dim, dh}, model_dim, dh, rng);
  store[prefix + ".bq"] = Tensor::zeros({heads, dh});
  store[prefix + ".bk"] = Tensor::zeros({heads, dh});
  store[prefix + ".bv"] = Tensor::zeros({heads, dh});
  store[prefix + ".wo"] = glorot_init({model_dim, model_dim}, model_dim, model_dim, rng);
  store[prefix + ".bo"] = Tensor::zeros({model_dim});
}

AttentionParams bind_attention_params(Binder& bind, const std::string& prefix, std::size_t heads,
                                      std::size_t model_dim) {
  if (heads == 0 || model_dim % heads != 0) {
    throw DimensionError("attention: model_dim " + std::to_string(model_dim) +
                         " not divisible by heads " + std::to_string(heads));
  }
  AttentionParams p;
  p.heads = heads;
  p.model_dim = model_dim;
  p.head_dim = model_dim / heads;
  p.wq = bind(prefix + ".wq");
  p.wk = bind(prefix + ".wk");
  p.wv = bind(prefix + ".wv");
  p.bq = bind(prefix + ".bq");
  p.bk = bind(prefix + ".bk");
  p.bv = bind(prefix + ".bv");
  p.wo = bind(prefix + ".wo");
  p.bo = bind(prefix + ".bo");
  return p;
}

AttentionParams identity_attention_params(Graph& g, std::size_t model_dim) {
  AttentionParams p;
  p.heads = 1;
  p.model_dim = model_dim;
  p.head_dim = model_dim;
  Tensor eye({1, model_dim, model_dim});
  for (std::size_t i = 0; i < model_dim; ++i) eye(0, i, i) = 1.0;
  p.wq = g.constant(eye);
  p.wk = g.constant(eye);
  p.wv = g.constant(eye);
  p.bq = g.constant(Tensor::zeros({1, model_dim}));
  p.bk = p.bq;
  p.bv = p.bq;
  p.wo = g.constant(identity_matrix(model_dim));
  p.bo = g.constant(Tensor::zeros({model_dim}));
  return p;
}

Value attention_core(Value queries, Value keys, const AttentionParams& p,
                     const Tensor* additive_mask, AttentionTrace* trace) {
  if (queries.rank() < 2 || keys.rank() < 2) {
    throw DimensionError("attention: operands must be at least rank 2");
  }
  if (queries.shape().back() != p.model_dim || keys.shape().back() != p.model_dim) {
    throw DimensionError("attention: feature width mismatch, queries " +
                         shape_str(queries.shape()) + ", keys " + shape_str(keys.shape()) +
                         ", model_dim " + std::to_string(p.model_dim));
  }
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(p.head_dim));
  const std::size_t d = p.model_dim, dh = p.head_dim;
  std::vector<Value> head_outputs;
  head_outputs.reserve(p.heads);
  Tensor* tw = nullptr;
  for (std::size_t i = 0; i < p.heads; ++i) {
    Value wq_i = reshape(slice(p.wq, 0, i, 1), {d, dh});
    Value wk_i = reshape(slice(p.wk, 0, i, 1), {d, dh});
    Value wv_i = reshape(slice(p.wv, 0, i, 1), {d, dh});
    Value bq_i = reshape(slice(p.bq, 0, i, 1), {dh});
    Value bk_i = reshape(slice(p.bk, 0, i, 1), {dh});
    Value bv_i = reshape(slice(p.bv, 0, i, 1), {dh});
    Value q = add_bias(matmul(queries, wq_i), bq_i);
    Value k = add_bias(matmul(keys, wk_i), bk_i);
    Value v = add_bias(matmul(keys, wv_i), bv_i);
    Value scores = scale(matmul(q, transpose_last2(k)), inv_scale);
    if (additive_mask != nullptr) scores = add_const_2d(scores, *additive_mask);
    Value attn = softmax_lastdim(scores);
    if (trace != nullptr) {
      if (tw == nullptr) {
        std::vector<std::size_t> tshape = attn.shape();
        tshape.insert(tshape.begin(), p.heads);
        trace->weights = Tensor(tshape);
        tw = &trace->weights;
      }
      const Tensor& av = attn.val();
      std::memcpy(tw->data() + i * av.size(), av.data(), av.size() * sizeof(double));
    }
    head_outputs.push_back(matmul(attn, v));
  }
  Value hcat = head_outputs.size() == 1
                   ? head_outputs[0]
                   : concat(head_outputs, head_outputs[0].rank() - 1);
  return add_bias(matmul(hcat, p.wo), p.bo);
}

Value stack_context(Value x, const ContextConfig& cfg) {
  require_cthd(x, "stack_context");
  const std::size_t t = x.dim(1);
  if (t == 0) {
    throw DimensionError("stack_context: empty time axis in " + shape_str(x.shape()));
  }
  const std::size_t f = cfg.radius;
  Value padded = (f == 0) ? x : zero_pad(x, 1, f, f);  // [C, T+2F, D]
  std::vector<Value> windows;
  windows.reserve(2 * f + 1);
  for (std::size_t o = 0; o < 2 * f + 1; ++o) {
    Value win = (f == 0) ? padded : slice(padded, 1, o, t);  // frames shifted by o-F
    windows.push_back(permute(win, {1, 0, 2}));              // [T, C, D]
  }
  return windows.size() == 1 ? windows[0] : concat(windows, 1);
}

std::pair<Value, AttentionTrace> single_channel_attention(Value x, const AttentionParams& p) {
  if (x.rank() != 2) {
    throw DimensionError("single_channel_attention: expected [T,D], got " +
                         shape_str(x.shape()));
  }
  AttentionTrace trace;
  Value out = attention_core(x, x, p, nullptr, &trace);
  return {out, std::move(trace)};
}

std::pair<Value, AttentionTrace> flcca(Value x, const AttentionParams& p) {
  require_cthd(x, "flcca");
  if (x.dim(0) < 2) {
    throw ContractError("flcca: needs at least 2 channels, got " + shape_str(x.shape()));
  }
  Value keys = leave_one_out_mean(x);
  AttentionTrace trace;
  Value out = attention_core(x, keys, p, nullptr, &trace);  // batch C, attention over T
  return {out, std::move(trace)};
}

std::pair<Value, AttentionTrace> clcca(Value x, const AttentionParams& p) {
  require_cthd(x, "clcca");
  Value xt = permute(x, {1, 0, 2});  // [T, C, D]
  AttentionTrace trace;
  Value out = attention_core(xt, xt, p, nullptr, &trace);  // batch T, attention over C
  return {permute(out, {1, 0, 2}), std::move(trace)};
}

std::pair<Value, AttentionTrace> mfcca(Value x, const AttentionParams& p,
                                       const ContextConfig& cfg) {
  require_cthd(x, "mfcca");
  Value queries = permute(x, {1, 0, 2});      // [T, C, D]
  Value keys = stack_context(x, cfg);         // [T, (2F+1)C, D]
  AttentionTrace trace;
  Value out = attention_core(queries, keys, p, nullptr, &trace);
  return {permute(out, {1, 0, 2}), std::move(trace)};
}

}  // namespace mfcca

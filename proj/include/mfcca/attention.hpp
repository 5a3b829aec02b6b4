// mfcca/attention.hpp
//
// The four attention blocks: plain single-channel self-attention, the two
// cross-channel references (frame-level and channel-level), and the
// multi-frame cross-channel block that attends over a (2F+1)-frame context
// of all channels at once.

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

#pragma once

#include <cstddef>
#include <string>
#include <utility>

#include "mfcca/graph.hpp"
#include "mfcca/params.hpp"

namespace mfcca {

// Context radius F: each query sees frames t-F .. t+F of every channel,
// zero-padded at the sequence boundaries. Width of the key axis is (2F+1)*C.
struct ContextConfig {
  std::size_t radius = 0;
};

// Attention weights captured during a forward pass. Layouts per producer:
//   single_channel_attention : [h, T, T]
//   flcca                    : [h, C, Tq, Tk]
//   clcca                    : [h, T, Cq, Ck]
//   mfcca                    : [h, T, C, (2F+1)*C]   key axis offset-major:
//                              key index = (offset + F) * C + channel
// Every slice over the last (key) axis sums to 1.
struct AttentionTrace {
  Tensor weights;
};

// Multi-head projection parameters bound into one graph. Per-head query/key/
// value maps are stacked on the leading axis; the output projection returns
// the concatenated heads to model width.
struct AttentionParams {
  std::size_t heads = 1;
  std::size_t model_dim = 0;
  std::size_t head_dim = 0;   // model_dim / heads
  Value wq, wk, wv;           // [heads, D, head_dim]
  Value bq, bk, bv;           // [heads, head_dim]
  Value wo;                   // [D, D]
  Value bo;                   // [D]
};

// Creates store entries <prefix>.{wq,wk,wv,bq,bk,bv,wo,bo}.
void init_attention_params(ParamStore& store, const std::string& prefix, std::size_t heads,
                           std::size_t model_dim, Rng& rng);

AttentionParams bind_attention_params(Binder& bind, const std::string& prefix, std::size_t heads,
                                      std::size_t model_dim);

// Single head, identity q/k/v/out projections, zero biases. Used by the
// attention-score diagnostics where raw feature dot products are wanted.
AttentionParams identity_attention_params(Graph& g, std::size_t model_dim);

// Scaled dot-product core shared by all variants. queries [..., Nq, D] and
// keys [..., Nk, D] must carry identical batch prefixes; scaling is
// 1/sqrt(head_dim). additive_mask ([Nq, Nk]) is added to every score slab.
Value attention_core(Value queries, Value keys, const AttentionParams& p,
                     const Tensor* additive_mask, AttentionTrace* trace);

// Context stacking: [C,T,D] -> [T, (2F+1)*C, D]; row t concatenates frames
// t-F..t+F of every channel (zero outside [0,T)), offset-major then channel.
Value stack_context(Value x, const ContextConfig& cfg);

std::pair<Value, AttentionTrace> single_channel_attention(Value x, const AttentionParams& p);

// Queries from each channel, keys/values from the mean of the other
// channels; attention over time per channel. Requires C >= 2.
std::pair<Value, AttentionTrace> flcca(Value x, const AttentionParams& p);

// Attention across the C channel vectors at each time step independently.
std::pair<Value, AttentionTrace> clcca(Value x, const AttentionParams& p);

// Queries are the per-channel frames at t; keys/values are the stacked
// context rows. Degenerates to clcca at F = 0.
std::pair<Value, AttentionTrace> mfcca(Value x, const AttentionParams& p,
                                       const ContextConfig& cfg);

}  // namespace mfcca

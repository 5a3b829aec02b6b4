// mfcca/encoder.cpp

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

#include "mfcca/encoder.hpp"

#include <cmath>

namespace mfcca {

namespace {

void init_layer_norm(ParamStore& store, const std::string& prefix, std::size_t dim) {
  store[prefix + ".gain"] = Tensor::filled({dim}, 1.0);
  store[prefix + ".bias"] = Tensor::zeros({dim});
}

LayerNormParams bind_layer_norm(Binder& bind, const std::string& prefix) {
  return LayerNormParams{bind(prefix + ".gain"), bind(prefix + ".bias")};
}

void init_ffn(ParamStore& store, const std::string& prefix, std::size_t dim, std::size_t width,
              Rng& rng) {
  store[prefix + ".w1"] = glorot_init({dim, width}, dim, width, rng);
  store[prefix + ".b1"] = Tensor::zeros({width});
  store[prefix + ".w2"] = glorot_init({width, dim}, width, dim, rng);
  store[prefix + ".b2"] = Tensor::zeros({dim});
}

FfnParams bind_ffn(Binder& bind, const std::string& prefix) {
  return FfnParams{bind(prefix + ".w1"), bind(prefix + ".b1"), bind(prefix + ".w2"),
                   bind(prefix + ".b2")};
}

void init_conv_module(ParamStore& store, const std::string& prefix, std::size_t dim,
                      std::size_t kernel, Rng& rng) {
  store[prefix + ".pw1_w"] = glorot_init({dim, 2 * dim}, dim, 2 * dim, rng);
  store[prefix + ".pw1_b"] = Tensor::zeros({2 * dim});
  store[prefix + ".dw_w"] = glorot_init({kernel, dim}, kernel, 1, rng);
  store[prefix + ".dw_b"] = Tensor::zeros({dim});
  init_layer_norm(store, prefix + ".norm", dim);
  store[prefix + ".pw2_w"] = glorot_init({dim, dim}, dim, dim, rng);
  store[prefix + ".pw2_b"] = Tensor::zeros({dim});
}

ConvModuleParams bind_conv_module(Binder& bind, const std::string& prefix, std::size_t kernel) {
  ConvModuleParams p;
  p.pw1_w = bind(prefix + ".pw1_w");
  p.pw1_b = bind(prefix + ".pw1_b");
  p.dw_w = bind(prefix + ".dw_w");
  p.dw_b = bind(prefix + ".dw_b");
  p.norm = bind_layer_norm(bind, prefix + ".norm");
  p.pw2_w = bind(prefix + ".pw2_w");
  p.pw2_b = bind(prefix + ".pw2_b");
  p.kernel = kernel;
  return p;
}

}  // namespace

void init_encoder_params(ParamStore& store, const std::string& prefix, const EncoderConfig& cfg,
                         Rng& rng) {
  store[prefix + ".embed.w"] = glorot_init({cfg.input_dim, cfg.model_dim}, cfg.input_dim,
                                           cfg.model_dim, rng);
  store[prefix + ".embed.b"] = Tensor::zeros({cfg.model_dim});
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string lp = prefix + ".layer" + std::to_string(l);
    init_layer_norm(store, lp + ".ln_ffn_in", cfg.model_dim);
    init_layer_norm(store, lp + ".ln_mfcca", cfg.model_dim);
    init_layer_norm(store, lp + ".ln_temporal", cfg.model_dim);
    init_layer_norm(store, lp + ".ln_conv", cfg.model_dim);
    init_layer_norm(store, lp + ".ln_ffn_out", cfg.model_dim);
    init_layer_norm(store, lp + ".ln_final", cfg.model_dim);
    init_ffn(store, lp + ".ffn_in", cfg.model_dim, cfg.ffn_dim, rng);
    init_ffn(store, lp + ".ffn_out", cfg.model_dim, cfg.ffn_dim, rng);
    init_attention_params(store, lp + ".mfcca", cfg.heads, cfg.model_dim, rng);
    init_attention_params(store, lp + ".temporal", cfg.heads, cfg.model_dim, rng);
    init_conv_module(store, lp + ".conv", cfg.model_dim, cfg.conv_kernel, rng);
  }
}

EncoderStackParams bind_encoder_params(Binder& bind, const std::string& prefix,
                                       const EncoderConfig& cfg) {
  EncoderStackParams p;
  p.embed_w = bind(prefix + ".embed.w");
  p.embed_b = bind(prefix + ".embed.b");
  p.positional = cfg.positional;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string lp = prefix + ".layer" + std::to_string(l);
    EncoderLayerParams lay;
    lay.ln_ffn_in = bind_layer_norm(bind, lp + ".ln_ffn_in");
    lay.ln_mfcca = bind_layer_norm(bind, lp + ".ln_mfcca");
    lay.ln_temporal = bind_layer_norm(bind, lp + ".ln_temporal");
    lay.ln_conv = bind_layer_norm(bind, lp + ".ln_conv");
    lay.ln_ffn_out = bind_layer_norm(bind, lp + ".ln_ffn_out");
    lay.ln_final = bind_layer_norm(bind, lp + ".ln_final");
    lay.ffn_in = bind_ffn(bind, lp + ".ffn_in");
    lay.ffn_out = bind_ffn(bind, lp + ".ffn_out");
    lay.mfcca_params = bind_attention_params(bind, lp + ".mfcca", cfg.heads, cfg.model_dim);
    lay.temporal_params = bind_attention_params(bind, lp + ".temporal", cfg.heads, cfg.model_dim);
    lay.conv = bind_conv_module(bind, lp + ".conv", cfg.conv_kernel);
    p.layers.push_back(lay);
  }
  return p;
}

std::vector<std::pair<std::size_t, std::size_t>> fusion_channel_schedule(std::size_t configured) {
  if (configured == 0) throw ContractError("fusion: configured channel count must be positive");
  const std::size_t half = std::max<std::size_t>(configured / 2, 1);
  const std::size_t quarter = std::max<std::size_t>(configured / 4, 1);
  std::vector<std::size_t> widths{configured, half, half, quarter, quarter, 1};
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) pairs.emplace_back(widths[i], widths[i + 1]);
  return pairs;
}

std::size_t fusion_param_count(std::size_t configured) {
  std::size_t n = 0;
  for (auto [in, out] : fusion_channel_schedule(configured)) n += 9 * in * out + out;
  return n;
}

void init_fusion_params(ParamStore& store, const std::string& prefix, std::size_t configured,
                        Rng& rng) {
  auto schedule = fusion_channel_schedule(configured);
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    auto [in, out] = schedule[i];
    store[prefix + ".conv" + std::to_string(i) + ".w"] =
        glorot_init({out, in, 3, 3}, in * 9, out * 9, rng);
    store[prefix + ".conv" + std::to_string(i) + ".b"] = Tensor::zeros({out});
  }
}

FusionParams bind_fusion_params(Binder& bind, const std::string& prefix, std::size_t configured) {
  FusionParams p;
  p.configured_channels = configured;
  auto schedule = fusion_channel_schedule(configured);
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    p.kernels.push_back(bind(prefix + ".conv" + std::to_string(i) + ".w"));
    p.biases.push_back(bind(prefix + ".conv" + std::to_string(i) + ".b"));
  }
  return p;
}

Value layer_norm(Value x, const LayerNormParams& p) {
  return layer_norm_lastdim(x, p.gain, p.bias);
}

Value feed_forward(Value x, const FfnParams& p) {
  Value h = swish(add_bias(matmul(x, p.w1), p.b1));
  return add_bias(matmul(h, p.w2), p.b2);
}

Value conv_module(Value x, const ConvModuleParams& p) {
  if (x.rank() != 3) {
    throw DimensionError("conv_module: expected [C,T,D], got " + shape_str(x.shape()));
  }
  const std::size_t t = x.dim(1);
  const std::size_t k = p.kernel;
  if (k % 2 == 0) throw DimensionError("conv_module: kernel must be odd");
  Value u = glu(add_bias(matmul(x, p.pw1_w), p.pw1_b), 2);  // [C,T,D]
  // depthwise over time: sum of shifted copies weighted per tap and feature
  Value padded = zero_pad(u, 1, k / 2, k / 2);
  Value acc;
  for (std::size_t j = 0; j < k; ++j) {
    Value win = slice(padded, 1, j, t);
    Value tap = reshape(slice(p.dw_w, 0, j, 1), {p.dw_w.dim(1)});
    Value term = mul_vec_lastdim(win, tap);
    acc = (j == 0) ? term : add(acc, term);
  }
  Value conv = add_bias(acc, p.dw_b);
  Value normed = swish(layer_norm(conv, p.norm));
  return add_bias(matmul(normed, p.pw2_w), p.pw2_b);
}

Value encoder_layer(Value x, const EncoderLayerParams& p, const ContextConfig& ctx,
                    AttentionTrace* mfcca_trace) {
  Value h = add(x, scale(feed_forward(layer_norm(x, p.ln_ffn_in), p.ffn_in), 0.5));
  {
    // cross-channel attention first: channel dependence is learned before
    // the frame-level blocks mix temporal context
    Value normed = layer_norm(h, p.ln_mfcca);
    Value queries = permute(normed, {1, 0, 2});
    Value keys = stack_context(normed, ctx);
    Value att = attention_core(queries, keys, p.mfcca_params, nullptr, mfcca_trace);
    h = add(h, permute(att, {1, 0, 2}));
  }
  {
    Value normed = layer_norm(h, p.ln_temporal);  // per-channel self-attention over time
    Value att = attention_core(normed, normed, p.temporal_params, nullptr, nullptr);
    h = add(h, att);
  }
  h = add(h, conv_module(layer_norm(h, p.ln_conv), p.conv));
  h = add(h, scale(feed_forward(layer_norm(h, p.ln_ffn_out), p.ffn_out), 0.5));
  return layer_norm(h, p.ln_final);
}

Tensor sinusoidal_positional_encoding(std::size_t frames, std::size_t dim) {
  Tensor pe({frames, dim});
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double exponent = static_cast<double>(2 * (i / 2)) / static_cast<double>(dim);
      const double angle = static_cast<double>(t) / std::pow(10000.0, exponent);
      pe(t, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

Value encoder_stack(Value features, const EncoderStackParams& p, const ContextConfig& ctx,
                    std::vector<AttentionTrace>* trace_sink) {
  if (features.rank() != 3) {
    throw DimensionError("encoder_stack: expected [C,T,D_in], got " +
                         shape_str(features.shape()));
  }
  if (p.layers.empty()) throw ContractError("encoder_stack: no layers");
  Value h = add_bias(matmul(features, p.embed_w), p.embed_b);
  if (p.positional) {
    h = add_const_2d(h, sinusoidal_positional_encoding(h.dim(1), h.dim(2)));
  }
  for (const EncoderLayerParams& layer : p.layers) {
    AttentionTrace trace;
    h = encoder_layer(h, layer, ctx, trace_sink != nullptr ? &trace : nullptr);
    if (trace_sink != nullptr) trace_sink->push_back(std::move(trace));
  }
  return h;
}

Value expand_channels(Value x, std::size_t target) {
  if (x.rank() != 3) {
    throw DimensionError("expand_channels: expected [C,T,D], got " + shape_str(x.shape()));
  }
  const std::size_t c = x.dim(0);
  if (c == 0 || c > target) {
    throw ContractError("expand_channels: channel count " + std::to_string(c) +
                        " outside [1, " + std::to_string(target) + "]");
  }
  if (c == target) return x;
  std::vector<Value> parts;
  parts.reserve(target);
  for (std::size_t j = 0; j < target; ++j) parts.push_back(slice(x, 0, j % c, 1));
  return concat(parts, 0);
}

Value conv_fusion(Value x, const FusionParams& p) {
  if (x.rank() != 3 || x.dim(0) != p.configured_channels) {
    throw DimensionError("conv_fusion: expected [" + std::to_string(p.configured_channels) +
                         ",T,D], got " + shape_str(x.shape()));
  }
  Value h = x;
  for (std::size_t i = 0; i < p.kernels.size(); ++i) {
    h = conv2d(h, p.kernels[i], p.biases[i]);
    if (i + 1 < p.kernels.size()) h = swish(h);  // last layer stays linear
  }
  return reshape(h, {x.dim(1), x.dim(2)});
}

}  // namespace mfcca

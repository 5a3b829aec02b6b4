// mfcca/encoder.hpp
//
// Multi-channel encoder: Conformer-style layers hosting the multi-frame
// cross-channel attention, plus the five-layer 2-D convolution stack that
// collapses the channel axis to a single fused sequence.

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
#include <vector>

#include "mfcca/attention.hpp"
#include "mfcca/graph.hpp"
#include "mfcca/params.hpp"

namespace mfcca {

struct FfnParams {
  Value w1, b1;  // D -> width
  Value w2, b2;  // width -> D
};

struct LayerNormParams {
  Value gain, bias;
};

// Pointwise(D->2D) + GLU, depthwise over time, norm, swish, pointwise(D->D).
struct ConvModuleParams {
  Value pw1_w, pw1_b;   // [D, 2D], [2D]
  Value dw_w, dw_b;     // [k, D], [D]  depthwise taps per feature
  LayerNormParams norm;
  Value pw2_w, pw2_b;   // [D, D], [D]
  std::size_t kernel = 7;
};

// One encoder layer. Sub-block order: half FFN, multi-frame cross-channel
// attention, temporal self-attention per channel, convolution module, half
// FFN, closing layer norm; every sub-block is pre-norm residual.
struct EncoderLayerParams {
  LayerNormParams ln_ffn_in, ln_mfcca, ln_temporal, ln_conv, ln_ffn_out, ln_final;
  FfnParams ffn_in, ffn_out;
  AttentionParams mfcca_params;
  AttentionParams temporal_params;
  ConvModuleParams conv;
};

struct EncoderStackParams {
  Value embed_w, embed_b;  // input width -> D, shared across channels
  std::vector<EncoderLayerParams> layers;
  bool positional = true;
};

// Five conv2d layers over the (T, D) plane with channels as feature maps;
// output-channel counts taper to 1.
struct FusionParams {
  std::size_t configured_channels = 8;  // C*
  std::vector<Value> kernels;           // [out, in, 3, 3] each
  std::vector<Value> biases;            // [out] each
};

struct EncoderConfig {
  std::size_t layers = 2;
  std::size_t model_dim = 32;
  std::size_t heads = 2;
  std::size_t ffn_dim = 64;
  std::size_t conv_kernel = 7;
  std::size_t input_dim = 16;
  std::size_t context_radius = 2;
  std::size_t fusion_channels = 8;
  bool positional = true;
};

void init_encoder_params(ParamStore& store, const std::string& prefix, const EncoderConfig& cfg,
                         Rng& rng);
EncoderStackParams bind_encoder_params(Binder& bind, const std::string& prefix,
                                       const EncoderConfig& cfg);
void init_fusion_params(ParamStore& store, const std::string& prefix, std::size_t configured,
                        Rng& rng);
FusionParams bind_fusion_params(Binder& bind, const std::string& prefix, std::size_t configured);

Value layer_norm(Value x, const LayerNormParams& p);
Value feed_forward(Value x, const FfnParams& p);
Value conv_module(Value x, const ConvModuleParams& p);  // [C,T,D] -> [C,T,D]

Value encoder_layer(Value x, const EncoderLayerParams& p, const ContextConfig& ctx,
                    AttentionTrace* mfcca_trace = nullptr);

// Embedding + positional encoding + layers; collects per-layer attention
// traces when a sink is given.
Value encoder_stack(Value features, const EncoderStackParams& p, const ContextConfig& ctx,
                    std::vector<AttentionTrace>* trace_sink = nullptr);

// Absolute sinusoidal positions, added identically to every channel.
Tensor sinusoidal_positional_encoding(std::size_t frames, std::size_t dim);

// Cyclic channel repetition up to the fusion width: output j = input (j mod C).
Value expand_channels(Value x, std::size_t target);

Value conv_fusion(Value x, const FusionParams& p);  // [C*,T,D] -> [T,D]

// {in,out} channel pairs of the five fusion layers for a configured width.
std::vector<std::pair<std::size_t, std::size_t>> fusion_channel_schedule(std::size_t configured);

std::size_t fusion_param_count(std::size_t configured);

}  // namespace mfcca

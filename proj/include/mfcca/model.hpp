// mfcca/model.hpp
//
// Whole-model assembly: multi-channel encoder + channel fusion + attention
// decoder, the plain-SGD training loop with linear warmup, greedy
// evaluation, and checkpoint serialization.

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

#include <cstdint>
#include <string>
#include <vector>

#include "mfcca/encoder.hpp"
#include "mfcca/masking.hpp"
#include "mfcca/sim.hpp"
#include "mfcca/sot.hpp"

namespace mfcca {

struct ModelConfig {
  std::size_t enc_layers = 2;
  std::size_t model_dim = 32;
  std::size_t heads = 2;
  std::size_t ffn_dim = 64;
  std::size_t context_radius = 2;  // F
  std::size_t conv_kernel = 7;
  std::size_t fusion_channels = 8;  // C*
  std::size_t dec_layers = 1;
  std::size_t input_dim = 16;
  std::size_t vocab = 24;
  double label_smoothing = 0.1;
  bool positional = true;

  // 2-layer encoder, D=32, 2 heads, FFN 64, kernel 7, 1-layer decoder.
  static ModelConfig desk(std::size_t input_dim, std::size_t vocab);
  // 11-layer encoder, D=256, 4 heads, FFN 2048, kernel 15, 6-layer decoder.
  static ModelConfig paper(std::size_t input_dim, std::size_t vocab);

  EncoderConfig encoder_config() const;
  DecoderSpec decoder_spec() const;
};

void init_model_params(ParamStore& store, const ModelConfig& cfg, std::uint64_t seed);

// Closed-form parameter count for a configuration (no allocation).
std::size_t config_param_count(const ModelConfig& cfg);

struct ModelForward {
  EncoderStackParams enc;
  FusionParams fusion;
  DecoderParams dec;
};

ModelForward bind_model(Binder& bind, const ModelConfig& cfg);

// Encoder + channel expansion + fusion on already-bound parameters.
Value model_memory(const ModelForward& m, const ModelConfig& cfg, Value features,
                   std::vector<AttentionTrace>* traces = nullptr);

// Non-differentiating convenience wrapper: features -> fused memory [T,D].
Tensor encode_memory(const ParamStore& store, const ModelConfig& cfg, const Tensor& features,
                     std::vector<AttentionTrace>* traces = nullptr);

struct TrainOptions {
  std::size_t epochs = 200;
  double step_size = 0.15;
  std::size_t warmup_steps = 320;
  double mask_prob = 0.0;
  std::uint64_t seed = 1;
  double stop_token_accuracy = 2.0;  // early stop threshold; >1 disables
  std::size_t start_epoch = 0;       // nonzero when resuming
};

struct EpochStats {
  std::size_t epoch = 0;
  double loss = 0.0;
  double token_accuracy = 0.0;
};

// Per-utterance SGD over the dataset; deterministic in (seed, start_epoch).
// Returns one stats row per completed epoch.
std::vector<EpochStats> train_model(ParamStore& store, const ModelConfig& cfg,
                                    const std::vector<SimUtterance>& data,
                                    const Vocabulary& vocab, const TrainOptions& opts);

struct EvalResult {
  std::size_t channels = 0;
  std::size_t utterances = 0;
  std::size_t ref_tokens = 0;
  std::size_t edit_errors = 0;
  double cer = 0.0;
};

// Greedy-decodes the dataset using only the first `channels` channels of
// each record. jobs > 1 decodes utterances in parallel; the aggregate is
// order-independent.
EvalResult evaluate_model(const ParamStore& store, const ModelConfig& cfg,
                          const std::vector<SimUtterance>& data, const Vocabulary& vocab,
                          std::size_t channels, std::size_t max_decode_len, bool keep_sc,
                          std::size_t jobs = 1);

void save_checkpoint(const std::string& path, const ParamStore& store, std::size_t epoch);
std::pair<ParamStore, std::size_t> load_checkpoint(const std::string& path);

}  // namespace mfcca

// mfcca/sot.hpp
//
// Serialized output training: multi-speaker transcripts are joined into one
// target sequence ordered by start time, with a speaker-change token between
// speakers. Hosts the attention decoder, its loss, greedy decoding, and the
// character-error-rate metric.

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
#include <map>
#include <string>
#include <vector>

#include "mfcca/encoder.hpp"
#include "mfcca/graph.hpp"
#include "mfcca/params.hpp"

namespace mfcca {

// Dense token<->id table. Specials occupy the first four ids in fixed order.
class Vocabulary {
 public:
  static constexpr const char* kPad = "<pad>";
  static constexpr const char* kSos = "<sos>";
  static constexpr const char* kEos = "<eos>";
  static constexpr const char* kSc = "<sc>";

  // Specials first, then the given regular tokens.
  static Vocabulary build(const std::vector<std::string>& regular_tokens);
  static Vocabulary load(const std::string& path);
  void save(const std::string& path) const;

  std::size_t size() const { return tokens_.size(); }
  int id(const std::string& token) const;  // VocabularyError when unknown
  const std::string& token(int id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  int pad_id() const { return 0; }
  int sos_id() const { return 1; }
  int eos_id() const { return 2; }
  int sc_id() const { return 3; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int> ids_;
};

struct SpeakerTurn {
  int speaker_id = 0;
  double start_time = 0.0;  // seconds
  std::vector<std::string> tokens;
};

struct SotUtterance {
  std::vector<SpeakerTurn> speakers;
  Tensor features;  // [C,T,D], may be empty for text-only uses
};

// Speakers sorted by (start_time, speaker_id), token sequences joined with
// one <sc> between adjacent speakers, wrapped in <sos>/<eos>. Exactly
// n_speakers-1 <sc> tokens appear.
std::vector<int> serialize_sot(const SotUtterance& u, const Vocabulary& v);

struct DecoderSpec {
  std::size_t layers = 1;
  std::size_t heads = 2;
  std::size_t model_dim = 32;
  std::size_t ffn_dim = 64;
  std::size_t vocab = 0;
  bool positional = true;
};

struct DecoderLayerParams {
  LayerNormParams ln_self, ln_cross, ln_ffn;
  AttentionParams self_attn, cross_attn;
  FfnParams ffn;
};

struct DecoderParams {
  Value embed;  // [V, D]
  std::vector<DecoderLayerParams> layers;
  LayerNormParams ln_final;
  Value out_w, out_b;  // D -> V
  bool positional = true;
};

void init_decoder_params(ParamStore& store, const std::string& prefix, const DecoderSpec& spec,
                         Rng& rng);
DecoderParams bind_decoder_params(Binder& bind, const std::string& prefix,
                                  const DecoderSpec& spec);

// 0 on and below the diagonal, a large negative constant above it; added to
// self-attention scores so position i never sees positions > i.
Tensor causal_mask(std::size_t len);

// Causal self-attention over the target prefix, cross-attention over the
// fused encoder memory [S,D], per-position vocabulary logits [L,|V|].
Value decoder_forward(Value memory, const std::vector<int>& target_ids, const DecoderParams& p);

// Label-smoothed cross entropy averaged over non-pad positions.
Value sot_loss(Value logits, const std::vector<int>& targets, double smoothing, int pad_id);

// Stepwise argmax continuation from <sos>; stops at <eos> or max_len tokens.
// <eos> is not part of the returned sequence.
std::vector<int> greedy_decode(const Tensor& memory, const DecoderSpec& spec,
                               const ParamStore& store, const std::string& prefix, int sos_id,
                               int eos_id, std::size_t max_len);

std::size_t edit_distance(const std::vector<int>& a, const std::vector<int>& b);

// (substitutions + insertions + deletions) / |ref|. ref must be nonempty.
double cer(const std::vector<int>& ref, const std::vector<int>& hyp);

// CER on serialized multi-speaker sequences; <sc> is stripped from both
// sides unless keep_sc is set.
double cer_serialized(const std::vector<int>& ref, const std::vector<int>& hyp, int sc_id,
                      bool keep_sc = false);

// Fraction of non-pad positions whose argmax logit equals the target.
double token_accuracy(const Tensor& logits, const std::vector<int>& targets, int pad_id);

}  // namespace mfcca

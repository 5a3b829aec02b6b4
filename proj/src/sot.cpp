// mfcca/sot.cpp

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

#include "mfcca/sot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace mfcca {

Vocabulary Vocabulary::build(const std::vector<std::string>& regular_tokens) {
  Vocabulary v;
  v.tokens_ = {kPad, kSos, kEos, kSc};
  for (const std::string& t : regular_tokens) v.tokens_.push_back(t);
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    auto [it, inserted] = v.ids_.emplace(v.tokens_[i], static_cast<int>(i));
    if (!inserted) throw VocabularyError("vocabulary: duplicate token '" + v.tokens_[i] + "'");
  }
  return v;
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("vocabulary: cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) lines.push_back(line);
  }
  if (lines.size() < 4 || lines[0] != kPad || lines[1] != kSos || lines[2] != kEos ||
      lines[3] != kSc) {
    throw VocabularyError("vocabulary: " + path + " must start with the four special tokens");
  }
  return build({lines.begin() + 4, lines.end()});
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("vocabulary: cannot write " + path);
  for (const std::string& t : tokens_) out << t << '\n';
}

int Vocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  if (it == ids_.end()) throw VocabularyError("vocabulary: unknown token '" + token + "'");
  return it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw VocabularyError("vocabulary: id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> serialize_sot(const SotUtterance& u, const Vocabulary& v) {
  if (u.speakers.empty()) throw ContractError("serialize_sot: no speakers");
  for (const SpeakerTurn& s : u.speakers) {
    if (s.tokens.empty()) {
      throw ContractError("serialize_sot: empty token sequence for speaker " +
                          std::to_string(s.speaker_id));
    }
    if (!std::isfinite(s.start_time)) {
      throw ContractError("serialize_sot: non-finite start time for speaker " +
                          std::to_string(s.speaker_id));
    }
  }
  std::vector<const SpeakerTurn*> order;
  for (const SpeakerTurn& s : u.speakers) order.push_back(&s);
  std::sort(order.begin(), order.end(), [](const SpeakerTurn* a, const SpeakerTurn* b) {
    if (a->start_time != b->start_time) return a->start_time < b->start_time;
    return a->speaker_id < b->speaker_id;  // tie-break on speaker id
  });
  std::vector<int> ids;
  ids.push_back(v.sos_id());
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i > 0) ids.push_back(v.sc_id());
    for (const std::string& tok : order[i]->tokens) ids.push_back(v.id(tok));
  }
  ids.push_back(v.eos_id());
  return ids;
}

void init_decoder_params(ParamStore& store, const std::string& prefix, const DecoderSpec& spec,
                         Rng& rng) {
  if (spec.vocab == 0) throw ContractError("decoder: vocabulary size not set");
  store[prefix + ".embed"] = glorot_init({spec.vocab, spec.model_dim}, spec.vocab,
                                         spec.model_dim, rng);
  for (std::size_t l = 0; l < spec.layers; ++l) {
    const std::string lp = prefix + ".layer" + std::to_string(l);
    store[lp + ".ln_self.gain"] = Tensor::filled({spec.model_dim}, 1.0);
    store[lp + ".ln_self.bias"] = Tensor::zeros({spec.model_dim});
    store[lp + ".ln_cross.gain"] = Tensor::filled({spec.model_dim}, 1.0);
    store[lp + ".ln_cross.bias"] = Tensor::zeros({spec.model_dim});
    store[lp + ".ln_ffn.gain"] = Tensor::filled({spec.model_dim}, 1.0);
    store[lp + ".ln_ffn.bias"] = Tensor::zeros({spec.model_dim});
    init_attention_params(store, lp + ".self", spec.heads, spec.model_dim, rng);
    init_attention_params(store, lp + ".cross", spec.heads, spec.model_dim, rng);
    store[lp + ".ffn.w1"] = glorot_init({spec.model_dim, spec.ffn_dim}, spec.model_dim,
                                        spec.ffn_dim, rng);
    store[lp + ".ffn.b1"] = Tensor::zeros({spec.ffn_dim});
    store[lp + ".ffn.w2"] = glorot_init({spec.ffn_dim, spec.model_dim}, spec.ffn_dim,
                                        spec.model_dim, rng);
    store[lp + ".ffn.b2"] = Tensor::zeros({spec.model_dim});
  }
  store[prefix + ".ln_final.gain"] = Tensor::filled({spec.model_dim}, 1.0);
  store[prefix + ".ln_final.bias"] = Tensor::zeros({spec.model_dim});
  store[prefix + ".out.w"] = glorot_init({spec.model_dim, spec.vocab}, spec.model_dim,
                                         spec.vocab, rng);
  store[prefix + ".out.b"] = Tensor::zeros({spec.vocab});
}

DecoderParams bind_decoder_params(Binder& bind, const std::string& prefix,
                                  const DecoderSpec& spec) {
  DecoderParams p;
  p.embed = bind(prefix + ".embed");
  p.positional = spec.positional;
  for (std::size_t l = 0; l < spec.layers; ++l) {
    const std::string lp = prefix + ".layer" + std::to_string(l);
    DecoderLayerParams lay;
    lay.ln_self = LayerNormParams{bind(lp + ".ln_self.gain"), bind(lp + ".ln_self.bias")};
    lay.ln_cross = LayerNormParams{bind(lp + ".ln_cross.gain"), bind(lp + ".ln_cross.bias")};
    lay.ln_ffn = LayerNormParams{bind(lp + ".ln_ffn.gain"), bind(lp + ".ln_ffn.bias")};
    lay.self_attn = bind_attention_params(bind, lp + ".self", spec.heads, spec.model_dim);
    lay.cross_attn = bind_attention_params(bind, lp + ".cross", spec.heads, spec.model_dim);
    lay.ffn = FfnParams{bind(lp + ".ffn.w1"), bind(lp + ".ffn.b1"), bind(lp + ".ffn.w2"),
                        bind(lp + ".ffn.b2")};
    p.layers.push_back(lay);
  }
  p.ln_final = LayerNormParams{bind(prefix + ".ln_final.gain"), bind(prefix + ".ln_final.bias")};
  p.out_w = bind(prefix + ".out.w");
  p.out_b = bind(prefix + ".out.b");
  return p;
}

Tensor causal_mask(std::size_t len) {
  // -1e30 swamps any finite score; the masked term exponentiates to exactly
  // zero after max subtraction, so causality holds bit-for-bit.
  Tensor m({len, len});
  for (std::size_t i = 0; i < len; ++i)
    for (std::size_t j = i + 1; j < len; ++j) m(i, j) = -1e30;
  return m;
}

Value decoder_forward(Value memory, const std::vector<int>& target_ids, const DecoderParams& p) {
  if (memory.rank() != 2) {
    throw DimensionError("decoder_forward: memory must be [S,D], got " +
                         shape_str(memory.shape()));
  }
  if (target_ids.empty()) throw ContractError("decoder_forward: empty target sequence");
  Value h = embedding_lookup(p.embed, target_ids);  // [L, D]
  if (p.positional) {
    h = add_const_2d(h, sinusoidal_positional_encoding(target_ids.size(), h.dim(1)));
  }
  const Tensor mask = causal_mask(target_ids.size());
  for (const DecoderLayerParams& lay : p.layers) {
    Value normed = layer_norm(h, lay.ln_self);
    h = add(h, attention_core(normed, normed, lay.self_attn, &mask, nullptr));
    Value crossed = layer_norm(h, lay.ln_cross);
    h = add(h, attention_core(crossed, memory, lay.cross_attn, nullptr, nullptr));
    h = add(h, feed_forward(layer_norm(h, lay.ln_ffn), lay.ffn));
  }
  h = layer_norm(h, p.ln_final);
  return add_bias(matmul(h, p.out_w), p.out_b);
}

Value sot_loss(Value logits, const std::vector<int>& targets, double smoothing, int pad_id) {
  if (logits.rank() != 2) {
    throw DimensionError("sot_loss: logits must be [L,V], got " + shape_str(logits.shape()));
  }
  const std::size_t len = logits.dim(0), vocab = logits.dim(1);
  if (targets.size() != len) {
    throw DimensionError("sot_loss: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(len) + " logit rows");
  }
  Tensor weights({len, vocab});
  std::size_t non_pad = 0;
  for (std::size_t l = 0; l < len; ++l) {
    const int y = targets[l];
    if (y == pad_id) continue;
    if (y < 0 || static_cast<std::size_t>(y) >= vocab) {
      throw ContractError("sot_loss: target id " + std::to_string(y) + " outside vocabulary");
    }
    ++non_pad;
    for (std::size_t v = 0; v < vocab; ++v) {
      weights(l, v) = smoothing / static_cast<double>(vocab);
    }
    weights(l, static_cast<std::size_t>(y)) += 1.0 - smoothing;
  }
  if (non_pad == 0) throw ContractError("sot_loss: every position is padding");
  Value weighted = mul_const(log_softmax_lastdim(logits), std::move(weights));
  return scale(sum_all(weighted), -1.0 / static_cast<double>(non_pad));
}

std::vector<int> greedy_decode(const Tensor& memory, const DecoderSpec& spec,
                               const ParamStore& store, const std::string& prefix, int sos_id,
                               int eos_id, std::size_t max_len) {
  if (max_len == 0) throw ContractError("greedy_decode: max_len must be at least 1");
  std::vector<int> prefix_ids{sos_id};
  std::vector<int> emitted;
  while (emitted.size() < max_len) {
    Graph g;
    Binder bind(g, store, false);
    DecoderParams p = bind_decoder_params(bind, prefix, spec);
    Value logits = decoder_forward(g.leaf(memory, false), prefix_ids, p);
    const Tensor& lv = logits.val();
    const std::size_t last = lv.dim(0) - 1;
    std::size_t best = 0;
    for (std::size_t v = 1; v < lv.dim(1); ++v) {
      if (lv(last, v) > lv(last, best)) best = v;
    }
    if (static_cast<int>(best) == eos_id) break;
    emitted.push_back(static_cast<int>(best));
    prefix_ids.push_back(static_cast<int>(best));
  }
  return emitted;
}

std::size_t edit_distance(const std::vector<int>& a, const std::vector<int>& b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<std::size_t> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

double cer(const std::vector<int>& ref, const std::vector<int>& hyp) {
  if (ref.empty()) throw ContractError("cer: empty reference");
  return static_cast<double>(edit_distance(ref, hyp)) / static_cast<double>(ref.size());
}

double cer_serialized(const std::vector<int>& ref, const std::vector<int>& hyp, int sc_id,
                      bool keep_sc) {
  if (keep_sc) return cer(ref, hyp);
  auto strip = [sc_id](const std::vector<int>& seq) {
    std::vector<int> out;
    for (int t : seq)
      if (t != sc_id) out.push_back(t);
    return out;
  };
  return cer(strip(ref), strip(hyp));
}

double token_accuracy(const Tensor& logits, const std::vector<int>& targets, int pad_id) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size()) {
    throw DimensionError("token_accuracy: logits " + shape_str(logits.shape()) + " vs " +
                         std::to_string(targets.size()) + " targets");
  }
  std::size_t correct = 0, total = 0;
  for (std::size_t l = 0; l < targets.size(); ++l) {
    if (targets[l] == pad_id) continue;
    ++total;
    std::size_t best = 0;
    for (std::size_t v = 1; v < logits.dim(1); ++v) {
      if (logits(l, v) > logits(l, best)) best = v;
    }
    if (static_cast<int>(best) == targets[l]) ++correct;
  }
  if (total == 0) return 0.0;
  return static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace mfcca

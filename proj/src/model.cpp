// mfcca/model.cpp

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

#include "mfcca/model.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <thread>

#include "json.hpp"

namespace mfcca {

using nlohmann::json;

ModelConfig ModelConfig::desk(std::size_t input_dim, std::size_t vocab) {
  ModelConfig cfg;
  cfg.input_dim = input_dim;
  cfg.vocab = vocab;
  return cfg;
}

ModelConfig ModelConfig::paper(std::size_t input_dim, std::size_t vocab) {
  ModelConfig cfg;
  cfg.enc_layers = 11;
  cfg.model_dim = 256;
  cfg.heads = 4;
  cfg.ffn_dim = 2048;
  cfg.conv_kernel = 15;
  cfg.dec_layers = 6;
  cfg.input_dim = input_dim;
  cfg.vocab = vocab;
  return cfg;
}

EncoderConfig ModelConfig::encoder_config() const {
  EncoderConfig e;
  e.layers = enc_layers;
  e.model_dim = model_dim;
  e.heads = heads;
  e.ffn_dim = ffn_dim;
  e.conv_kernel = conv_kernel;
  e.input_dim = input_dim;
  e.context_radius = context_radius;
  e.fusion_channels = fusion_channels;
  e.positional = positional;
  return e;
}

DecoderSpec ModelConfig::decoder_spec() const {
  DecoderSpec d;
  d.layers = dec_layers;
  d.heads = heads;
  d.model_dim = model_dim;
  d.ffn_dim = ffn_dim;
  d.vocab = vocab;
  d.positional = positional;
  return d;
}

void init_model_params(ParamStore& store, const ModelConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  init_encoder_params(store, "enc", cfg.encoder_config(), rng);
  init_fusion_params(store, "fusion", cfg.fusion_channels, rng);
  init_decoder_params(store, "dec", cfg.decoder_spec(), rng);
}

std::size_t config_param_count(const ModelConfig& cfg) {
  const std::size_t d = cfg.model_dim, f = cfg.ffn_dim, v = cfg.vocab;
  const std::size_t ln = 2 * d;
  const std::size_t ffn = d * f + f + f * d + d;
  const std::size_t attn = 4 * d * d + 4 * d;  // q,k,v,out projections with biases
  const std::size_t conv = d * 2 * d + 2 * d + cfg.conv_kernel * d + d + ln + d * d + d;
  const std::size_t enc_layer = 6 * ln + 2 * ffn + 2 * attn + conv;
  const std::size_t enc = cfg.input_dim * d + d + cfg.enc_layers * enc_layer;
  const std::size_t dec_layer = 3 * ln + 2 * attn + ffn;
  const std::size_t dec = v * d + cfg.dec_layers * dec_layer + ln + d * v + v;
  return enc + fusion_param_count(cfg.fusion_channels) + dec;
}

ModelForward bind_model(Binder& bind, const ModelConfig& cfg) {
  ModelForward m;
  m.enc = bind_encoder_params(bind, "enc", cfg.encoder_config());
  m.fusion = bind_fusion_params(bind, "fusion", cfg.fusion_channels);
  m.dec = bind_decoder_params(bind, "dec", cfg.decoder_spec());
  return m;
}

Value model_memory(const ModelForward& m, const ModelConfig& cfg, Value features,
                   std::vector<AttentionTrace>* traces) {
  Value encoded = encoder_stack(features, m.enc, ContextConfig{cfg.context_radius}, traces);
  return conv_fusion(expand_channels(encoded, cfg.fusion_channels), m.fusion);
}

Tensor encode_memory(const ParamStore& store, const ModelConfig& cfg, const Tensor& features,
                     std::vector<AttentionTrace>* traces) {
  Graph g;
  Binder bind(g, store, false);
  ModelForward m = bind_model(bind, cfg);
  return model_memory(m, cfg, g.leaf(features, false), traces).val();
}

namespace {

Tensor first_channels(const Tensor& features, std::size_t k) {
  if (features.rank() != 3 || k == 0 || k > features.dim(0)) {
    throw ContractError("eval: requested " + std::to_string(k) + " channels from " +
                        shape_str(features.shape()));
  }
  const std::size_t slab = features.dim(1) * features.dim(2);
  std::vector<double> data(features.data(), features.data() + k * slab);
  return Tensor({k, features.dim(1), features.dim(2)}, std::move(data));
}

}  // namespace

std::vector<EpochStats> train_model(ParamStore& store, const ModelConfig& cfg,
                                    const std::vector<SimUtterance>& data,
                                    const Vocabulary& vocab, const TrainOptions& opts) {
  if (data.empty()) throw ContractError("train: empty dataset");
  std::vector<std::vector<int>> serialized;
  serialized.reserve(data.size());
  for (const SimUtterance& utt : data) serialized.push_back(serialize_sot(utt.sot, vocab));

  const MaskPolicy mask_policy{opts.mask_prob, MaskCountRule::kUniform};
  const Rng root(opts.seed);
  std::vector<EpochStats> log;
  std::size_t step = opts.start_epoch * data.size();

  for (std::size_t epoch = opts.start_epoch; epoch < opts.epochs; ++epoch) {
    Rng epoch_rng = root.child(epoch);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[epoch_rng.below(i)]);
    }

    double loss_sum = 0.0;
    std::size_t correct = 0, total = 0;
    for (std::size_t idx : order) {
      Tensor feats = data[idx].features;
      if (opts.mask_prob > 0.0) {
        Rng mask_rng = epoch_rng.child(idx);
        feats = apply_mask(feats, sample_mask(mask_policy, feats.dim(0), mask_rng));
      }
      const std::vector<int>& ids = serialized[idx];
      const std::vector<int> inputs(ids.begin(), ids.end() - 1);
      const std::vector<int> targets(ids.begin() + 1, ids.end());

      Graph g;
      Binder bind(g, store, true);
      ModelForward m = bind_model(bind, cfg);
      Value memory = model_memory(m, cfg, g.leaf(feats, false));
      Value logits = decoder_forward(memory, inputs, m.dec);
      Value loss = sot_loss(logits, targets, cfg.label_smoothing, vocab.pad_id());
      g.backward(loss);

      ++step;
      const double warm =
          opts.warmup_steps == 0
              ? 1.0
              : std::min(1.0, static_cast<double>(step) / static_cast<double>(opts.warmup_steps));
      sgd_step(store, bind, opts.step_size * warm);

      loss_sum += loss.val()[0];
      const double acc = token_accuracy(logits.val(), targets, vocab.pad_id());
      correct += static_cast<std::size_t>(std::llround(acc * static_cast<double>(targets.size())));
      total += targets.size();
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.loss = loss_sum / static_cast<double>(data.size());
    stats.token_accuracy = total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
    log.push_back(stats);
    if (stats.token_accuracy >= opts.stop_token_accuracy) break;
  }
  return log;
}

EvalResult evaluate_model(const ParamStore& store, const ModelConfig& cfg,
                          const std::vector<SimUtterance>& data, const Vocabulary& vocab,
                          std::size_t channels, std::size_t max_decode_len, bool keep_sc,
                          std::size_t jobs) {
  EvalResult result;
  result.channels = channels;
  result.utterances = data.size();
  if (data.empty()) return result;

  std::vector<std::size_t> edits(data.size(), 0), refs(data.size(), 0);
  auto decode_range = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const SimUtterance& utt = data[i];
      Tensor feats = first_channels(utt.features, channels);
      Tensor memory = encode_memory(store, cfg, feats);
      std::vector<int> hyp = greedy_decode(memory, cfg.decoder_spec(), store, "dec",
                                           vocab.sos_id(), vocab.eos_id(), max_decode_len);
      std::vector<int> ref = serialize_sot(utt.sot, vocab);
      ref.erase(ref.begin());  // sos
      ref.pop_back();          // eos
      if (!keep_sc) {
        auto drop = [&](std::vector<int>& seq) {
          seq.erase(std::remove(seq.begin(), seq.end(), vocab.sc_id()), seq.end());
        };
        drop(ref);
        drop(hyp);
      }
      if (ref.empty()) throw ContractError("eval: empty reference after stripping");
      edits[i] = edit_distance(ref, hyp);
      refs[i] = ref.size();
    }
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(jobs, data.size()));
  if (workers == 1) {
    decode_range(0, data.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (data.size() + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t begin = w * chunk;
      const std::size_t end = std::min(data.size(), begin + chunk);
      if (begin >= end) break;
      pool.emplace_back(decode_range, begin, end);
    }
    for (std::thread& t : pool) t.join();
  }

  for (std::size_t i = 0; i < data.size(); ++i) {
    result.edit_errors += edits[i];
    result.ref_tokens += refs[i];
  }
  result.cer = result.ref_tokens == 0
                   ? 0.0
                   : static_cast<double>(result.edit_errors) / static_cast<double>(result.ref_tokens);
  return result;
}

void save_checkpoint(const std::string& path, const ParamStore& store, std::size_t epoch) {
  json ckpt;
  ckpt["format"] = "mfcca-checkpoint-v1";
  ckpt["epoch"] = epoch;
  json params;
  for (const auto& [name, tensor] : store) {
    params[name] = {{"shape", tensor.shape()},
                    {"data", encode_doubles_hex(tensor.data(), tensor.size())}};
  }
  ckpt["params"] = params;
  std::ofstream out(path);
  if (!out) throw IoError("checkpoint: cannot write " + path);
  out << ckpt.dump() << '\n';
}

std::pair<ParamStore, std::size_t> load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("checkpoint: cannot open " + path);
  json ckpt = json::parse(in);
  if (ckpt.value("format", "") != "mfcca-checkpoint-v1") {
    throw IoError("checkpoint: unrecognized format in " + path);
  }
  ParamStore store;
  for (const auto& [name, entry] : ckpt.at("params").items()) {
    auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    std::vector<double> data = decode_doubles_hex(entry.at("data").get<std::string>());
    store.emplace(name, Tensor(std::move(shape), std::move(data)));
  }
  return {std::move(store), ckpt.at("epoch").get<std::size_t>()};
}

}  // namespace mfcca

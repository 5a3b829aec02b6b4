// mfcca/config.hpp
//
// Run configuration: a structured-text file of key = value lines grouped in
// sections, a desk/paper model preset, and override layering. Precedence is
// defaults < preset < file keys < MFCCA_SEED < command-line flags. Every
// command echoes its fully resolved configuration; a run is reproducible
// from the echo alone.

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

#include "mfcca/model.hpp"
#include "mfcca/sim.hpp"

namespace mfcca {

struct RunConfig {
  // [run]
  std::string preset = "desk";  // desk | paper
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  std::string data_dir = "data";
  std::size_t jobs = 1;

  // [gen]
  CorpusSpec gen;

  // [model]
  std::size_t enc_layers = 2;
  std::size_t model_dim = 32;
  std::size_t heads = 2;
  std::size_t ffn_dim = 64;
  std::size_t context_radius = 2;
  std::size_t conv_kernel = 7;
  std::size_t fusion_channels = 8;
  std::size_t dec_layers = 1;
  bool positional = true;

  // [train]
  std::size_t epochs = 200;
  double step_size = 0.15;
  std::size_t warmup_steps = 320;
  double mask_prob = 0.0;
  double label_smoothing = 0.1;
  double stop_token_accuracy = 2.0;  // disabled by default

  // [eval]
  std::vector<std::size_t> channel_counts = {1, 2, 4};
  std::size_t max_decode_len = 64;
  bool keep_sc = false;

  // Applies one "section.key" = value assignment; unknown keys are config
  // errors. "run.preset" re-applies the named preset's model fields.
  void apply(const std::string& section, const std::string& key, const std::string& value);

  // Model configuration for data of the given shape.
  ModelConfig model_config(std::size_t input_dim, std::size_t vocab) const;

  TrainOptions train_options() const;

  // Corpus spec with the run seed folded in.
  CorpusSpec corpus_spec() const;

  std::string to_ini() const;
};

// One key = value assignment parsed from a file or flag.
struct ConfigEntry {
  std::string section, key, value;
};

std::vector<ConfigEntry> parse_ini(const std::string& text);
std::vector<ConfigEntry> parse_ini_file(const std::string& path);

// defaults -> preset -> file -> MFCCA_SEED (when use_env) -> overrides.
RunConfig resolve_config(const std::string& config_path, const std::vector<ConfigEntry>& overrides,
                         bool use_env = true);

}  // namespace mfcca

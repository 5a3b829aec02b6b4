// mfcca/config.cpp

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

#include "mfcca/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "mfcca/error.hpp"

namespace mfcca {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const std::uint64_t out = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: bad integer for " + key + ": '" + v + "'");
  }
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  return static_cast<std::size_t>(parse_u64(key, v));
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: bad number for " + key + ": '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: bad boolean for " + key + ": '" + v + "'");
}

std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(parse_size(key, item));
  }
  if (out.empty()) throw ConfigError("config: empty list for " + key);
  return out;
}

}  // namespace

void RunConfig::apply(const std::string& section, const std::string& key,
                      const std::string& value) {
  const std::string full = section + "." + key;
  if (section == "run") {
    if (key == "preset") {
      if (value == "desk") {
        enc_layers = 2; model_dim = 32; heads = 2; ffn_dim = 64;
        conv_kernel = 7; dec_layers = 1;
      } else if (value == "paper") {
        enc_layers = 11; model_dim = 256; heads = 4; ffn_dim = 2048;
        conv_kernel = 15; dec_layers = 6;
      } else {
        throw ConfigError("config: unknown preset '" + value + "'");
      }
      preset = value;
    } else if (key == "seed") {
      seed = parse_u64(full, value);
    } else if (key == "out_dir") {
      out_dir = value;
    } else if (key == "data_dir") {
      data_dir = value;
    } else if (key == "jobs") {
      jobs = parse_size(full, value);
    } else {
      throw ConfigError("config: unknown key " + full);
    }
  } else if (section == "gen") {
    if (key == "train_utterances") gen.train_count = parse_size(full, value);
    else if (key == "eval_utterances") gen.eval_count = parse_size(full, value);
    else if (key == "speakers") gen.speakers = parse_size(full, value);
    else if (key == "channels") gen.channels = parse_size(full, value);
    else if (key == "feature_dim") gen.feature_dim = parse_size(full, value);
    else if (key == "vocab_size") gen.vocab_size = parse_size(full, value);
    else if (key == "tokens_min") gen.tokens_min = parse_size(full, value);
    else if (key == "tokens_max") gen.tokens_max = parse_size(full, value);
    else if (key == "overlap_min") gen.overlap_min = parse_double(full, value);
    else if (key == "overlap_max") gen.overlap_max = parse_double(full, value);
    else if (key == "noise_sigma") gen.noise_sigma = parse_double(full, value);
    else if (key == "radius") gen.radius = parse_double(full, value);
    else if (key == "frames_per_meter") gen.frames_per_meter = parse_double(full, value);
    else throw ConfigError("config: unknown key " + full);
  } else if (section == "model") {
    if (key == "enc_layers") enc_layers = parse_size(full, value);
    else if (key == "model_dim") model_dim = parse_size(full, value);
    else if (key == "heads") heads = parse_size(full, value);
    else if (key == "ffn_dim") ffn_dim = parse_size(full, value);
    else if (key == "context_radius") context_radius = parse_size(full, value);
    else if (key == "conv_kernel") conv_kernel = parse_size(full, value);
    else if (key == "fusion_channels") fusion_channels = parse_size(full, value);
    else if (key == "dec_layers") dec_layers = parse_size(full, value);
    else if (key == "positional") positional = parse_bool(full, value);
    else throw ConfigError("config: unknown key " + full);
  } else if (section == "train") {
    if (key == "epochs") epochs = parse_size(full, value);
    else if (key == "step_size") step_size = parse_double(full, value);
    else if (key == "warmup_steps") warmup_steps = parse_size(full, value);
    else if (key == "mask_prob") mask_prob = parse_double(full, value);
    else if (key == "label_smoothing") label_smoothing = parse_double(full, value);
    else if (key == "stop_token_accuracy") stop_token_accuracy = parse_double(full, value);
    else throw ConfigError("config: unknown key " + full);
  } else if (section == "eval") {
    if (key == "channel_counts") channel_counts = parse_size_list(full, value);
    else if (key == "max_decode_len") max_decode_len = parse_size(full, value);
    else if (key == "keep_sc") keep_sc = parse_bool(full, value);
    else throw ConfigError("config: unknown key " + full);
  } else {
    throw ConfigError("config: unknown section [" + section + "]");
  }
}

ModelConfig RunConfig::model_config(std::size_t input_dim, std::size_t vocab) const {
  ModelConfig cfg;
  cfg.enc_layers = enc_layers;
  cfg.model_dim = model_dim;
  cfg.heads = heads;
  cfg.ffn_dim = ffn_dim;
  cfg.context_radius = context_radius;
  cfg.conv_kernel = conv_kernel;
  cfg.fusion_channels = fusion_channels;
  cfg.dec_layers = dec_layers;
  cfg.input_dim = input_dim;
  cfg.vocab = vocab;
  cfg.label_smoothing = label_smoothing;
  cfg.positional = positional;
  return cfg;
}

TrainOptions RunConfig::train_options() const {
  TrainOptions opts;
  opts.epochs = epochs;
  opts.step_size = step_size;
  opts.warmup_steps = warmup_steps;
  opts.mask_prob = mask_prob;
  opts.seed = seed;
  opts.stop_token_accuracy = stop_token_accuracy;
  return opts;
}

CorpusSpec RunConfig::corpus_spec() const {
  CorpusSpec spec = gen;
  spec.seed = seed;
  return spec;
}

std::string RunConfig::to_ini() const {
  std::ostringstream os;
  os.precision(17);
  os << "[run]\n";
  os << "preset = " << preset << "\n";
  os << "seed = " << seed << "\n";
  os << "out_dir = " << out_dir << "\n";
  os << "data_dir = " << data_dir << "\n";
  os << "jobs = " << jobs << "\n";
  os << "\n[gen]\n";
  os << "train_utterances = " << gen.train_count << "\n";
  os << "eval_utterances = " << gen.eval_count << "\n";
  os << "speakers = " << gen.speakers << "\n";
  os << "channels = " << gen.channels << "\n";
  os << "feature_dim = " << gen.feature_dim << "\n";
  os << "vocab_size = " << gen.vocab_size << "\n";
  os << "tokens_min = " << gen.tokens_min << "\n";
  os << "tokens_max = " << gen.tokens_max << "\n";
  os << "overlap_min = " << gen.overlap_min << "\n";
  os << "overlap_max = " << gen.overlap_max << "\n";
  os << "noise_sigma = " << gen.noise_sigma << "\n";
  os << "radius = " << gen.radius << "\n";
  os << "frames_per_meter = " << gen.frames_per_meter << "\n";
  os << "\n[model]\n";
  os << "enc_layers = " << enc_layers << "\n";
  os << "model_dim = " << model_dim << "\n";
  os << "heads = " << heads << "\n";
  os << "ffn_dim = " << ffn_dim << "\n";
  os << "context_radius = " << context_radius << "\n";
  os << "conv_kernel = " << conv_kernel << "\n";
  os << "fusion_channels = " << fusion_channels << "\n";
  os << "dec_layers = " << dec_layers << "\n";
  os << "positional = " << (positional ? "true" : "false") << "\n";
  os << "\n[train]\n";
  os << "epochs = " << epochs << "\n";
  os << "step_size = " << step_size << "\n";
  os << "warmup_steps = " << warmup_steps << "\n";
  os << "mask_prob = " << mask_prob << "\n";
  os << "label_smoothing = " << label_smoothing << "\n";
  os << "stop_token_accuracy = " << stop_token_accuracy << "\n";
  os << "\n[eval]\n";
  os << "channel_counts = ";
  for (std::size_t i = 0; i < channel_counts.size(); ++i) {
    if (i) os << ",";
    os << channel_counts[i];
  }
  os << "\n";
  os << "max_decode_len = " << max_decode_len << "\n";
  os << "keep_sc = " << (keep_sc ? "true" : "false") << "\n";
  return os.str();
}

std::vector<ConfigEntry> parse_ini(const std::string& text) {
  std::vector<ConfigEntry> entries;
  std::istringstream in(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t comment = line.find_first_of("#;");
    if (comment != std::string::npos) line = line.substr(0, comment);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError("config: malformed section header at line " + std::to_string(lineno));
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: expected key = value at line " + std::to_string(lineno));
    }
    ConfigEntry e;
    e.section = section;
    e.key = trim(line.substr(0, eq));
    e.value = trim(line.substr(eq + 1));
    if (e.section.empty() || e.key.empty()) {
      throw ConfigError("config: key outside a section at line " + std::to_string(lineno));
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<ConfigEntry> parse_ini_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return parse_ini(os.str());
}

RunConfig resolve_config(const std::string& config_path, const std::vector<ConfigEntry>& overrides,
                         bool use_env) {
  RunConfig cfg;
  std::vector<ConfigEntry> file_entries;
  if (!config_path.empty()) file_entries = parse_ini_file(config_path);
  // preset first so file keys can refine it regardless of their order
  for (const ConfigEntry& e : file_entries) {
    if (e.section == "run" && e.key == "preset") cfg.apply(e.section, e.key, e.value);
  }
  for (const ConfigEntry& e : file_entries) {
    if (e.section == "run" && e.key == "preset") continue;
    cfg.apply(e.section, e.key, e.value);
  }
  if (use_env) {
    if (const char* env = std::getenv("MFCCA_SEED")) {
      cfg.apply("run", "seed", env);
    }
  }
  for (const ConfigEntry& e : overrides) {
    if (e.section == "run" && e.key == "preset") cfg.apply(e.section, e.key, e.value);
  }
  for (const ConfigEntry& e : overrides) {
    if (e.section == "run" && e.key == "preset") continue;
    cfg.apply(e.section, e.key, e.value);
  }
  return cfg;
}

}  // namespace mfcca

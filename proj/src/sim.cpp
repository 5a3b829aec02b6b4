// mfcca/sim.cpp

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

#include "mfcca/sim.hpp"

#include <algorithm>
#include <atomic>
#include <mutex>
#include <thread>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "mfcca/error.hpp"

namespace mfcca {

using nlohmann::json;

ArrayGeometry ArrayGeometry::annular(std::size_t n, double radius) {
  if (n == 0) throw ContractError("geometry: need at least one microphone");
  ArrayGeometry g;
  for (std::size_t i = 0; i < n; ++i) {
    const double angle = 2.0 * 3.14159265358979323846 * static_cast<double>(i) /
                         static_cast<double>(n);
    g.mics.push_back({radius * std::cos(angle), radius * std::sin(angle)});
  }
  return g;
}

std::vector<std::size_t> channel_delays(const ArrayGeometry& g, const std::array<double, 2>& src,
                                        double frames_per_meter) {
  if (frames_per_meter < 0.0) {
    throw ContractError("channel_delays: negative frames_per_meter");
  }
  if (g.mics.empty()) throw ContractError("channel_delays: empty geometry");
  std::vector<std::size_t> raw(g.mics.size());
  std::size_t lo = SIZE_MAX;
  for (std::size_t c = 0; c < g.mics.size(); ++c) {
    const double dx = src[0] - g.mics[c][0];
    const double dy = src[1] - g.mics[c][1];
    const double dist = std::sqrt(dx * dx + dy * dy);
    raw[c] = static_cast<std::size_t>(std::llround(dist * frames_per_meter));
    lo = std::min(lo, raw[c]);
  }
  for (std::size_t& d : raw) d -= lo;  // nearest mic gets delay 0
  return raw;
}

TokenPatterns::TokenPatterns(const std::vector<std::string>& tokens, std::size_t dim, Rng& rng)
    : dim_(dim) {
  for (const std::string& tok : tokens) {
    std::vector<double> v(dim);
    double norm = 0.0;
    for (double& x : v) {
      x = rng.normal();
      norm += x * x;
    }
    norm = std::sqrt(norm);
    if (norm == 0.0) norm = 1.0;
    for (double& x : v) x /= norm;
    patterns_.emplace(tok, std::move(v));
  }
}

const std::vector<double>& TokenPatterns::pattern(const std::string& token) const {
  auto it = patterns_.find(token);
  if (it == patterns_.end()) {
    throw VocabularyError("token patterns: unknown token '" + token + "'");
  }
  return it->second;
}

double overlap_from_events(const std::vector<SourceEvent>& events) {
  std::size_t horizon = 0;
  for (const SourceEvent& e : events) {
    horizon = std::max(horizon, e.start_frame + e.tokens.size());
  }
  std::vector<std::size_t> active(horizon, 0);
  for (const SourceEvent& e : events) {
    for (std::size_t f = e.start_frame; f < e.start_frame + e.tokens.size(); ++f) ++active[f];
  }
  std::size_t any = 0, multi = 0;
  for (std::size_t a : active) {
    if (a >= 1) ++any;
    if (a >= 2) ++multi;
  }
  if (any == 0) return 0.0;
  return static_cast<double>(multi) / static_cast<double>(any);
}

SimUtterance render_utterance(const std::vector<SourceEvent>& events, const ArrayGeometry& g,
                              const TokenPatterns& patterns, double noise_sigma, Rng& rng,
                              std::size_t frames, double frames_per_meter) {
  if (events.empty()) throw ContractError("render_utterance: no events");
  const std::size_t channels = g.mics.size();
  const std::size_t dim = patterns.dim();
  SimUtterance utt;
  utt.features = Tensor({channels, frames, dim});
  for (const SourceEvent& e : events) {
    std::vector<std::size_t> delays = channel_delays(g, e.position, frames_per_meter);
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t j = 0; j < e.tokens.size(); ++j) {
        const std::size_t frame = e.start_frame + delays[c] + j;
        if (frame >= frames) {
          throw ContractError("render_utterance: event overflows T=" + std::to_string(frames) +
                              " at frame " + std::to_string(frame));
        }
        const std::vector<double>& pat = patterns.pattern(e.tokens[j]);
        for (std::size_t d = 0; d < dim; ++d) utt.features(c, frame, d) += pat[d];
      }
    }
    utt.delays.push_back(std::move(delays));
    SpeakerTurn turn;
    turn.speaker_id = e.speaker_id;
    turn.start_time = static_cast<double>(e.start_frame) * kFrameShiftSeconds;
    turn.tokens = e.tokens;
    utt.sot.speakers.push_back(std::move(turn));
  }
  if (noise_sigma > 0.0) {
    for (std::size_t i = 0; i < utt.features.size(); ++i) {
      utt.features[i] += rng.normal(0.0, noise_sigma);
    }
  }
  utt.overlap_ratio = overlap_from_events(events);
  utt.sot.features = utt.features;
  return utt;
}

namespace {

std::vector<std::string> corpus_tokens(std::size_t vocab_size) {
  std::vector<std::string> tokens;
  for (std::size_t i = 0; i < vocab_size; ++i) tokens.push_back("t" + std::to_string(i));
  return tokens;
}

// Chooses token lengths and start frames so that the measured overlap lands
// inside [overlap_min, overlap_max]. Integer targets are solved from
// ratio = o / (total - o), then o is spread over adjacent speaker pairs.
std::vector<SourceEvent> plan_events(const CorpusSpec& spec, const std::vector<std::string>& tokens,
                                     Rng& rng) {
  const std::size_t k = spec.speakers;
  if (k == 0 || k > 4) throw ContractError("corpus: speakers must be in 1..4");
  if (spec.tokens_min == 0 || spec.tokens_min > spec.tokens_max) {
    throw ContractError("corpus: bad token length range");
  }
  for (int attempt = 0; attempt < 64; ++attempt) {
    std::vector<std::size_t> lens(k);
    for (std::size_t& l : lens) {
      l = spec.tokens_min + rng.below(spec.tokens_max - spec.tokens_min + 1);
    }
    std::vector<std::size_t> starts(k, 0);
    if (k >= 2) {
      std::size_t total = 0;
      for (std::size_t l : lens) total += l;
      const double t = static_cast<double>(total);
      const auto o_lo = static_cast<std::size_t>(
          std::ceil(spec.overlap_min * t / (1.0 + spec.overlap_min)));
      auto o_hi = static_cast<std::size_t>(
          std::floor(spec.overlap_max * t / (1.0 + spec.overlap_max)));
      std::vector<std::size_t> caps(k - 1);
      std::size_t cap_total = 0;
      for (std::size_t i = 0; i + 1 < k; ++i) {
        caps[i] = std::min(lens[i], lens[i + 1]) - 1;
        cap_total += caps[i];
      }
      o_hi = std::min(o_hi, cap_total);
      if (o_lo > o_hi) continue;
      std::size_t budget = o_lo + rng.below(o_hi - o_lo + 1);
      std::vector<std::size_t> overlaps(k - 1, 0);
      while (budget > 0) {
        bool placed = false;
        for (std::size_t i = 0; i + 1 < k && budget > 0; ++i) {
          if (overlaps[i] < caps[i]) {
            ++overlaps[i];
            --budget;
            placed = true;
          }
        }
        if (!placed) break;
      }
      for (std::size_t i = 1; i < k; ++i) {
        starts[i] = starts[i - 1] + lens[i - 1] - overlaps[i - 1];
      }
    }
    std::vector<SourceEvent> events(k);
    for (std::size_t s = 0; s < k; ++s) {
      events[s].speaker_id = static_cast<int>(s);
      events[s].start_frame = starts[s];
      const double angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
      const double dist = spec.radius * rng.uniform(1.2, 2.5);
      events[s].position = {dist * std::cos(angle), dist * std::sin(angle)};
      for (std::size_t j = 0; j < lens[s]; ++j) {
        events[s].tokens.push_back(tokens[rng.below(tokens.size())]);
      }
    }
    if (k >= 2) {
      const double measured = overlap_from_events(events);
      if (measured < spec.overlap_min || measured > spec.overlap_max) continue;
    }
    return events;
  }
  throw ContractError("corpus: could not satisfy the requested overlap range");
}

std::size_t frames_needed(const std::vector<SourceEvent>& events, const ArrayGeometry& g,
                          double frames_per_meter) {
  std::size_t frames = 0;
  for (const SourceEvent& e : events) {
    std::vector<std::size_t> delays = channel_delays(g, e.position, frames_per_meter);
    for (std::size_t d : delays) {
      frames = std::max(frames, e.start_frame + d + e.tokens.size());
    }
  }
  return frames;
}

json record_to_json(const SimUtterance& utt) {
  json rec;
  rec["id"] = utt.id;
  rec["C"] = utt.features.dim(0);
  rec["T"] = utt.features.dim(1);
  rec["D"] = utt.features.dim(2);
  rec["features"] = encode_doubles_hex(utt.features.data(), utt.features.size());
  json speakers = json::array();
  for (const SpeakerTurn& s : utt.sot.speakers) {
    json turn;
    turn["id"] = s.speaker_id;
    turn["start_frame"] =
        static_cast<std::size_t>(std::llround(s.start_time / kFrameShiftSeconds));
    turn["tokens"] = s.tokens;
    speakers.push_back(turn);
  }
  rec["speakers"] = speakers;
  rec["delays"] = utt.delays;
  rec["overlap"] = utt.overlap_ratio;
  return rec;
}

SimUtterance record_from_json(const json& rec) {
  SimUtterance utt;
  utt.id = rec.at("id").get<std::string>();
  const auto c = rec.at("C").get<std::size_t>();
  const auto t = rec.at("T").get<std::size_t>();
  const auto d = rec.at("D").get<std::size_t>();
  std::vector<double> data = decode_doubles_hex(rec.at("features").get<std::string>());
  utt.features = Tensor({c, t, d}, std::move(data));
  for (const json& turn : rec.at("speakers")) {
    SpeakerTurn s;
    s.speaker_id = turn.at("id").get<int>();
    s.start_time = static_cast<double>(turn.at("start_frame").get<std::size_t>()) *
                   kFrameShiftSeconds;
    s.tokens = turn.at("tokens").get<std::vector<std::string>>();
    utt.sot.speakers.push_back(std::move(s));
  }
  utt.delays = rec.at("delays").get<std::vector<std::vector<std::size_t>>>();
  utt.overlap_ratio = rec.at("overlap").get<double>();
  utt.sot.features = utt.features;
  return utt;
}

}  // namespace

void make_corpus(const CorpusSpec& spec, const std::string& out_dir, std::size_t jobs) {
  if (spec.train_count == 0 && spec.eval_count == 0) {
    throw ContractError("corpus: nothing to generate");
  }
  if (spec.overlap_min < 0.0 || spec.overlap_max > 1.0 || spec.overlap_min > spec.overlap_max) {
    throw ContractError("corpus: bad overlap range");
  }
  std::filesystem::create_directories(out_dir);
  Rng root(spec.seed);
  const std::vector<std::string> tokens = corpus_tokens(spec.vocab_size);
  Rng pattern_rng = root.child(0);
  TokenPatterns patterns(tokens, spec.feature_dim, pattern_rng);
  ArrayGeometry geometry = ArrayGeometry::annular(spec.channels, spec.radius);

  auto generate_split = [&](std::size_t count, std::uint64_t stream_base,
                            const std::string& prefix) {
    std::vector<SimUtterance> records(count);
    std::atomic<bool> failed{false};
    std::string failure;
    std::mutex failure_mutex;
    auto render_range = [&](std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end && !failed.load(); ++i) {
        try {
          Rng rng = root.child(stream_base + i);
          std::vector<SourceEvent> events = plan_events(spec, tokens, rng);
          const std::size_t frames = frames_needed(events, geometry, spec.frames_per_meter);
          SimUtterance utt = render_utterance(events, geometry, patterns, spec.noise_sigma, rng,
                                              frames, spec.frames_per_meter);
          char buf[32];
          std::snprintf(buf, sizeof buf, "%s-%04zu", prefix.c_str(), i);
          utt.id = buf;
          records[i] = std::move(utt);
        } catch (const std::exception& e) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          failed = true;
          failure = e.what();
        }
      }
    };
    const std::size_t workers = std::max<std::size_t>(1, std::min(jobs, count == 0 ? 1 : count));
    if (workers == 1) {
      render_range(0, count);
    } else {
      std::vector<std::thread> pool;
      const std::size_t chunk = (count + workers - 1) / workers;
      for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t begin = w * chunk;
        const std::size_t end = std::min(count, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back(render_range, begin, end);
      }
      for (std::thread& t : pool) t.join();
    }
    if (failed.load()) throw ContractError(failure);
    return records;
  };

  const std::vector<SimUtterance> train = generate_split(spec.train_count, 1000000, "train");
  const std::vector<SimUtterance> eval = generate_split(spec.eval_count, 2000000, "eval");

  const std::filesystem::path dir(out_dir);
  write_records_jsonl((dir / "train.jsonl").string(), train);
  write_records_jsonl((dir / "eval.jsonl").string(), eval);
  Vocabulary::build(tokens).save((dir / "vocab.txt").string());

  json manifest;
  manifest["generator"] = {{"train_count", spec.train_count},
                           {"eval_count", spec.eval_count},
                           {"speakers", spec.speakers},
                           {"channels", spec.channels},
                           {"feature_dim", spec.feature_dim},
                           {"vocab_size", spec.vocab_size},
                           {"tokens_min", spec.tokens_min},
                           {"tokens_max", spec.tokens_max},
                           {"overlap_min", spec.overlap_min},
                           {"overlap_max", spec.overlap_max},
                           {"noise_sigma", spec.noise_sigma},
                           {"radius", spec.radius},
                           {"frames_per_meter", spec.frames_per_meter},
                           {"seed", spec.seed}};
  json splits;
  auto id_list = [](const std::vector<SimUtterance>& recs) {
    json ids = json::array();
    for (const SimUtterance& r : recs) ids.push_back(r.id);
    return ids;
  };
  splits["train"] = {{"file", "train.jsonl"}, {"ids", id_list(train)}};
  splits["eval"] = {{"file", "eval.jsonl"}, {"ids", id_list(eval)}};
  manifest["splits"] = splits;
  manifest["vocab"] = "vocab.txt";
  std::ofstream mf(dir / "manifest.json");
  if (!mf) throw IoError("corpus: cannot write manifest under " + out_dir);
  mf << manifest.dump(2) << '\n';
}

std::string encode_doubles_hex(const double* data, std::size_t count) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(count * 16);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, &data[i], sizeof bits);
    for (std::size_t b = 0; b < 8; ++b) {  // little-endian byte order
      const auto byte = static_cast<unsigned>((bits >> (8 * b)) & 0xFFu);
      out.push_back(digits[byte >> 4]);
      out.push_back(digits[byte & 0xFu]);
    }
  }
  return out;
}

std::vector<double> decode_doubles_hex(const std::string& hex) {
  if (hex.size() % 16 != 0) throw IoError("hex feature block length not a multiple of 16");
  auto nibble = [](char ch) -> std::uint64_t {
    if (ch >= '0' && ch <= '9') return static_cast<std::uint64_t>(ch - '0');
    if (ch >= 'a' && ch <= 'f') return static_cast<std::uint64_t>(ch - 'a' + 10);
    throw IoError("bad hex digit in feature block");
  };
  std::vector<double> out(hex.size() / 16);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint64_t bits = 0;
    for (std::size_t b = 0; b < 8; ++b) {
      const std::uint64_t hi = nibble(hex[i * 16 + 2 * b]);
      const std::uint64_t lo = nibble(hex[i * 16 + 2 * b + 1]);
      bits |= ((hi << 4) | lo) << (8 * b);
    }
    std::memcpy(&out[i], &bits, sizeof(double));
  }
  return out;
}

void write_records_jsonl(const std::string& path, const std::vector<SimUtterance>& records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write dataset file " + path);
  for (const SimUtterance& r : records) out << record_to_json(r).dump() << '\n';
}

std::vector<SimUtterance> load_records_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset file " + path);
  std::vector<SimUtterance> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    records.push_back(record_from_json(json::parse(line)));
  }
  return records;
}

}  // namespace mfcca

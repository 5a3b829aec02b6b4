// mfcca/sim.hpp
//
// Deterministic synthetic data. An annular microphone array turns a source
// position into per-channel integer frame delays; token feature templates
// are written into a [C,T,D] feature tensor at those delays, overlapped
// speakers sum, and the result ships with its own ground truth (delays,
// serialized transcript, overlap ratio).
//
// Real inter-microphone delays are fractions of a frame and would vanish at
// a 10 ms hop; delays here are deliberately exaggerated to whole frames
// (frames_per_meter scale) so that delay effects are visible and testable.

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

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mfcca/rng.hpp"
#include "mfcca/sot.hpp"
#include "mfcca/tensor.hpp"

namespace mfcca {

// 10 ms hop: frame index * kFrameShiftSeconds = start time in seconds.
constexpr double kFrameShiftSeconds = 0.01;

struct ArrayGeometry {
  std::vector<std::array<double, 2>> mics;  // meters
  double sound_speed = 343.0;               // m/s

  // n microphones evenly spaced on a circle, mic 0 at (radius, 0).
  static ArrayGeometry annular(std::size_t n, double radius);
};

// Integer frame delay per channel: round(distance * frames_per_meter),
// shifted so the nearest microphone has delay 0.
std::vector<std::size_t> channel_delays(const ArrayGeometry& g, const std::array<double, 2>& src,
                                        double frames_per_meter);

// One active source: a token sequence starting at a frame, spoken from a
// fixed position. One token occupies one frame (before delay).
struct SourceEvent {
  int speaker_id = 0;
  std::array<double, 2> position{0.0, 0.0};
  std::size_t start_frame = 0;
  std::vector<std::string> tokens;
};

// Fixed per-token feature templates, drawn once from the corpus seed.
class TokenPatterns {
 public:
  TokenPatterns(const std::vector<std::string>& tokens, std::size_t dim, Rng& rng);
  const std::vector<double>& pattern(const std::string& token) const;
  std::size_t dim() const { return dim_; }

 private:
  std::size_t dim_;
  std::map<std::string, std::vector<double>> patterns_;
};

struct SimUtterance {
  std::string id;
  Tensor features;  // [C,T,D]
  SotUtterance sot;
  std::vector<std::vector<std::size_t>> delays;  // [source][channel]
  double overlap_ratio = 0.0;
};

// Fraction of speech-active frames covered by two or more sources,
// computed from the events' pre-delay spans.
double overlap_from_events(const std::vector<SourceEvent>& events);

// Renders all events into [C,T,D] features. Overlapping sources sum;
// zero-mean Gaussian noise is added per cell afterwards. Events that would
// write at or past T (after their channel delay) are a contract error.
SimUtterance render_utterance(const std::vector<SourceEvent>& events, const ArrayGeometry& g,
                              const TokenPatterns& patterns, double noise_sigma, Rng& rng,
                              std::size_t frames, double frames_per_meter);

struct CorpusSpec {
  std::size_t train_count = 64;
  std::size_t eval_count = 16;
  std::size_t speakers = 2;  // 1..4
  std::size_t channels = 4;
  std::size_t feature_dim = 16;
  std::size_t vocab_size = 20;
  std::size_t tokens_min = 4;
  std::size_t tokens_max = 6;
  double overlap_min = 0.15;
  double overlap_max = 0.40;
  double noise_sigma = 0.01;
  double radius = 1.0;            // array radius, meters
  double frames_per_meter = 1.0;  // delay exaggeration
  std::uint64_t seed = 1;
};

// Writes train.jsonl, eval.jsonl, vocab.txt, and manifest.json under
// out_dir. Every utterance's measured overlap lies in the requested range
// (speakers >= 2); generation is byte-deterministic in the seed. Utterances
// draw from independent per-index seed streams, so jobs > 1 renders them in
// parallel with identical output.
void make_corpus(const CorpusSpec& spec, const std::string& out_dir, std::size_t jobs = 1);

// --- dataset serialization ---------------------------------------------------
// One JSON object per line. Features travel as base-16 little-endian doubles
// in (C,T,D) row-major order, so records round-trip bit-exactly.

std::string encode_doubles_hex(const double* data, std::size_t count);
std::vector<double> decode_doubles_hex(const std::string& hex);

void write_records_jsonl(const std::string& path, const std::vector<SimUtterance>& records);
std::vector<SimUtterance> load_records_jsonl(const std::string& path);

}  // namespace mfcca

// tests/sim_test.cpp

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

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "mfcca/sim.hpp"
#include "oracles.hpp"

using namespace mfcca;

namespace {

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

TokenPatterns test_patterns(std::size_t dim, std::uint64_t seed = 7) {
  Rng rng(seed);
  return TokenPatterns({"t0", "t1", "t2", "t3", "t4", "t5", "t6", "t7"}, dim, rng);
}

}  // namespace

TEST_CASE("channel_delays geometry cases") {
  ArrayGeometry g = ArrayGeometry::annular(8, 1.0);
  REQUIRE(g.mics.size() == 8);

  SUBCASE("source at the array center gives all-zero delays") {
    for (std::size_t d : channel_delays(g, {0.0, 0.0}, 4.0)) CHECK(d == 0);
  }
  SUBCASE("source on the ray through mic 0") {
    std::vector<std::size_t> d = channel_delays(g, {3.0, 0.0}, 2.0);
    CHECK(d[0] == 0);                      // nearest
    CHECK(d[4] == *std::max_element(d.begin(), d.end()));  // diametrically opposite
    CHECK(d[4] > 0);
    CHECK(d[1] == d[7]);  // symmetry about the x axis
    CHECK(d[2] == d[6]);
  }
  SUBCASE("unit circle, source at (2,0), exaggeration 4 matches the distance table") {
    std::vector<std::size_t> d = channel_delays(g, {2.0, 0.0}, 4.0);
    // hand-computed: dist_c = |(2,0) - (cos a_c, sin a_c)|, a_c = 2 pi c / 8
    for (std::size_t c = 0; c < 8; ++c) {
      const double a = 2.0 * 3.14159265358979323846 * static_cast<double>(c) / 8.0;
      const double dist = std::hypot(2.0 - std::cos(a), std::sin(a));
      const auto rounded = static_cast<std::size_t>(std::llround(dist * 4.0));
      CHECK(d[c] == rounded - 4);  // min delay is mic 0 at distance 1 -> 4 frames
    }
  }
  SUBCASE("negative exaggeration rejected, zero allowed") {
    CHECK_THROWS_AS(channel_delays(g, {1.0, 0.0}, -1.0), ContractError);
    for (std::size_t d : channel_delays(g, {1.5, 0.3}, 0.0)) CHECK(d == 0);
  }
}

TEST_CASE("render_utterance basics") {
  ArrayGeometry g = ArrayGeometry::annular(4, 1.0);
  TokenPatterns patterns = test_patterns(6);

  SUBCASE("zero exaggeration renders identical channels") {
    Rng rng(1);
    SourceEvent e{0, {2.0, 1.0}, 2, {"t0", "t1", "t2"}};
    SimUtterance utt = render_utterance({e}, g, patterns, 0.0, rng, 8, 0.0);
    for (std::size_t c = 1; c < 4; ++c)
      for (std::size_t t = 0; t < 8; ++t)
        for (std::size_t d = 0; d < 6; ++d) CHECK(utt.features(c, t, d) == utt.features(0, t, d));
    CHECK(utt.sot.speakers.size() == 1);
    CHECK(utt.sot.speakers[0].start_time == doctest::Approx(0.02));
  }

  SUBCASE("non-overlapping events sum to the union of single renders") {
    Rng rng(2);
    SourceEvent a{0, {1.5, 0.0}, 0, {"t0", "t1"}};
    SourceEvent b{1, {0.0, 1.5}, 10, {"t2", "t3"}};
    SimUtterance both = render_utterance({a, b}, g, patterns, 0.0, rng, 20, 1.0);
    Rng r1(3), r2(4);
    SimUtterance only_a = render_utterance({a}, g, patterns, 0.0, r1, 20, 1.0);
    SimUtterance only_b = render_utterance({b}, g, patterns, 0.0, r2, 20, 1.0);
    for (std::size_t i = 0; i < both.features.size(); ++i) {
      CHECK(both.features[i] == only_a.features[i] + only_b.features[i]);
    }
  }

  SUBCASE("fixed seed renders are bit-identical") {
    SourceEvent e{0, {2.0, 0.5}, 0, {"t0", "t1", "t4"}};
    Rng r1(42), r2(42);
    SimUtterance u1 = render_utterance({e}, g, patterns, 0.05, r1, 10, 1.0);
    SimUtterance u2 = render_utterance({e}, g, patterns, 0.05, r2, 10, 1.0);
    for (std::size_t i = 0; i < u1.features.size(); ++i)
      CHECK(u1.features[i] == u2.features[i]);
  }

  SUBCASE("overflow of T is a contract error") {
    Rng rng(5);
    SourceEvent e{0, {2.0, 0.0}, 6, {"t0", "t1", "t2"}};
    CHECK_THROWS_AS(render_utterance({e}, g, patterns, 0.0, rng, 8, 1.0), ContractError);
  }
}

TEST_CASE("injected delays are recoverable by exhaustive cross-correlation at sigma 0") {
  ArrayGeometry g = ArrayGeometry::annular(8, 1.0);
  TokenPatterns patterns = test_patterns(12);
  Rng rng(6);
  SourceEvent e{0, {2.2, 0.7}, 1, {"t0", "t1", "t2", "t3", "t4", "t5"}};
  const std::size_t frames = 20;
  SimUtterance utt = render_utterance({e}, g, patterns, 0.0, rng, frames, 2.0);
  const std::vector<std::size_t>& injected = utt.delays[0];

  // recover the relative delay of each channel against channel 0 by shifting
  for (std::size_t c = 0; c < 8; ++c) {
    double best = -1e300;
    std::ptrdiff_t best_shift = 0;
    for (std::ptrdiff_t shift = -10; shift <= 10; ++shift) {
      double corr = 0.0;
      for (std::size_t t = 0; t < frames; ++t) {
        const std::ptrdiff_t t0 = static_cast<std::ptrdiff_t>(t) - shift;
        if (t0 < 0 || t0 >= static_cast<std::ptrdiff_t>(frames)) continue;
        for (std::size_t d = 0; d < 12; ++d) {
          corr += utt.features(c, t, d) * utt.features(0, static_cast<std::size_t>(t0), d);
        }
      }
      if (corr > best) {
        best = corr;
        best_shift = shift;
      }
    }
    const std::ptrdiff_t want = static_cast<std::ptrdiff_t>(injected[c]) -
                                static_cast<std::ptrdiff_t>(injected[0]);
    CHECK(best_shift == want);
  }
}

TEST_CASE("hex double codec round-trips bit-exactly") {
  Rng rng(8);
  std::vector<double> values;
  for (int i = 0; i < 64; ++i) values.push_back(rng.normal() * std::pow(10.0, rng.below(7)));
  values.push_back(0.0);
  values.push_back(-0.0);
  values.push_back(1e-308);
  std::string hex = encode_doubles_hex(values.data(), values.size());
  CHECK(hex.size() == values.size() * 16);
  std::vector<double> back = decode_doubles_hex(hex);
  REQUIRE(back.size() == values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint64_t a, b;
    std::memcpy(&a, &values[i], 8);
    std::memcpy(&b, &back[i], 8);
    CHECK(a == b);
  }
  CHECK_THROWS_AS(decode_doubles_hex("0123"), IoError);
  CHECK_THROWS_AS(decode_doubles_hex("zzzzzzzzzzzzzzzz"), IoError);
}

TEST_CASE("make_corpus writes coherent, deterministic datasets") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "mfcca_sim_test";
  fs::remove_all(dir);

  CorpusSpec spec;
  spec.train_count = 12;
  spec.eval_count = 4;
  spec.speakers = 2;
  spec.channels = 4;
  spec.feature_dim = 8;
  spec.vocab_size = 10;
  spec.seed = 99;
  make_corpus(spec, dir.string());

  std::vector<SimUtterance> train = load_records_jsonl((dir / "train.jsonl").string());
  std::vector<SimUtterance> eval = load_records_jsonl((dir / "eval.jsonl").string());
  CHECK(train.size() == 12);
  CHECK(eval.size() == 4);
  Vocabulary vocab = Vocabulary::load((dir / "vocab.txt").string());
  CHECK(vocab.size() == 14);

  for (const SimUtterance& utt : train) {
    // independent overlap counter from the record's own speaker spans
    std::size_t horizon = 0;
    for (const SpeakerTurn& s : utt.sot.speakers) {
      const auto start = static_cast<std::size_t>(std::llround(s.start_time / 0.01));
      horizon = std::max(horizon, start + s.tokens.size());
    }
    std::vector<int> active(horizon, 0);
    for (const SpeakerTurn& s : utt.sot.speakers) {
      const auto start = static_cast<std::size_t>(std::llround(s.start_time / 0.01));
      for (std::size_t f = start; f < start + s.tokens.size(); ++f) ++active[f];
    }
    std::size_t any = 0, multi = 0;
    for (int a : active) {
      if (a >= 1) ++any;
      if (a >= 2) ++multi;
    }
    const double measured = static_cast<double>(multi) / static_cast<double>(any);
    CHECK(measured >= 0.15);
    CHECK(measured <= 0.40);
    CHECK(measured == doctest::Approx(utt.overlap_ratio).epsilon(1e-12));
    CHECK(utt.features.dim(0) == 4);
    CHECK(utt.features.all_finite());
    std::vector<int> ids = serialize_sot(utt.sot, vocab);
    CHECK(std::count(ids.begin(), ids.end(), vocab.sc_id()) == 1);
  }

  SUBCASE("same seed reproduces byte-identical files") {
    const fs::path dir2 = fs::temp_directory_path() / "mfcca_sim_test_2";
    fs::remove_all(dir2);
    make_corpus(spec, dir2.string());
    CHECK(file_bytes((dir / "train.jsonl").string()) ==
          file_bytes((dir2 / "train.jsonl").string()));
    CHECK(file_bytes((dir / "eval.jsonl").string()) == file_bytes((dir2 / "eval.jsonl").string()));
    CHECK(file_bytes((dir / "manifest.json").string()) ==
          file_bytes((dir2 / "manifest.json").string()));
    fs::remove_all(dir2);
  }

  SUBCASE("parallel generation is byte-identical to sequential") {
    const fs::path dir5 = fs::temp_directory_path() / "mfcca_sim_test_5";
    fs::remove_all(dir5);
    make_corpus(spec, dir5.string(), /*jobs=*/3);
    CHECK(file_bytes((dir / "train.jsonl").string()) ==
          file_bytes((dir5 / "train.jsonl").string()));
    CHECK(file_bytes((dir / "eval.jsonl").string()) == file_bytes((dir5 / "eval.jsonl").string()));
    fs::remove_all(dir5);
  }

  SUBCASE("single-speaker corpora carry no sc token") {
    const fs::path dir3 = fs::temp_directory_path() / "mfcca_sim_test_3";
    fs::remove_all(dir3);
    CorpusSpec solo = spec;
    solo.speakers = 1;
    solo.train_count = 4;
    solo.eval_count = 2;
    make_corpus(solo, dir3.string());
    Vocabulary v3 = Vocabulary::load((dir3 / "vocab.txt").string());
    for (const SimUtterance& utt : load_records_jsonl((dir3 / "train.jsonl").string())) {
      std::vector<int> ids = serialize_sot(utt.sot, v3);
      CHECK(std::count(ids.begin(), ids.end(), v3.sc_id()) == 0);
    }
    fs::remove_all(dir3);
  }

  SUBCASE("records round-trip through jsonl bit-exactly") {
    const fs::path copy = dir / "copy.jsonl";
    write_records_jsonl(copy.string(), train);
    CHECK(file_bytes(copy.string()) == file_bytes((dir / "train.jsonl").string()));
  }

  SUBCASE("infeasible overlap is a contract error") {
    CorpusSpec bad = spec;
    bad.overlap_min = 0.99;
    bad.overlap_max = 1.0;
    const fs::path dir4 = fs::temp_directory_path() / "mfcca_sim_test_4";
    CHECK_THROWS_AS(make_corpus(bad, dir4.string()), ContractError);
    fs::remove_all(dir4);
  }

  fs::remove_all(dir);
}

// mfcca/rng.hpp

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

#include <cmath>
#include <cstdint>
#include <random>

namespace mfcca {

// Deterministic random source: std::mt19937_64 (a standardized generator,
// identical output on every platform) plus hand-written distribution maps.
// The standard library's distribution classes are implementation-defined,
// so uniform/normal/below are implemented here to keep draw sequences
// reproducible across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), eng_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1): top 53 bits of one draw.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = eng_();
    } while (x >= limit);
    return x % n;
  }

  // Standard normal via Box-Muller; consumes exactly two uniform draws.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  double normal(double mean, double sigma) { return mean + sigma * normal(); }

  // Independent child stream. child(i) is a function of (seed, i) only, so
  // per-item streams can be drawn in any order or in parallel.
  Rng child(std::uint64_t stream) const {
    return Rng(splitmix64(seed_ + 0x9E3779B97F4A7C15ULL * (stream + 1)));
  }

  static std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 eng_;
};

}  // namespace mfcca

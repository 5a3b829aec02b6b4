// mfcca/masking.hpp
//
// Channel-masking augmentation: with probability p an utterance has a
// random subset of its channels zeroed during training, which keeps the
// model usable when decoding with fewer microphones than it saw in
// training. At least one channel always survives.

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
#include <vector>

#include "mfcca/rng.hpp"
#include "mfcca/tensor.hpp"

namespace mfcca {

enum class MaskCountRule {
  kUniform,  // masked-channel count m uniform over {1, ..., C-1}
};

struct MaskPolicy {
  double prob = 0.0;
  MaskCountRule count_rule = MaskCountRule::kUniform;
};

struct MaskPlan {
  std::vector<std::size_t> masked;  // sorted channel indices
  bool applied = false;
};

// With probability prob: draw m uniform in {1..C-1}, then a uniform
// m-subset of channels. Never masks every channel.
MaskPlan sample_mask(const MaskPolicy& policy, std::size_t channels, Rng& rng);

// Zeroes the planned channels of a [C,T,D] tensor; input is not mutated and
// unmasked channels are copied bit-identically. Applying twice equals
// applying once.
Tensor apply_mask(const Tensor& x, const MaskPlan& plan);

}  // namespace mfcca

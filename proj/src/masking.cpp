// mfcca/masking.cpp

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

#include "mfcca/masking.hpp"

#include <algorithm>
#include <numeric>

#include "mfcca/error.hpp"

namespace mfcca {

MaskPlan sample_mask(const MaskPolicy& policy, std::size_t channels, Rng& rng) {
  if (policy.prob < 0.0 || policy.prob > 1.0) {
    throw ContractError("sample_mask: probability " + std::to_string(policy.prob) +
                        " outside [0, 1]");
  }
  if (policy.prob > 0.0 && channels < 2) {
    throw ContractError("sample_mask: masking needs at least 2 channels");
  }
  MaskPlan plan;
  if (policy.prob == 0.0 || rng.uniform() >= policy.prob) return plan;

  const std::size_t m = 1 + rng.below(channels - 1);  // 1 <= m <= C-1
  std::vector<std::size_t> indices(channels);
  std::iota(indices.begin(), indices.end(), 0);
  for (std::size_t i = 0; i < m; ++i) {
    std::swap(indices[i], indices[i + rng.below(channels - i)]);
  }
  plan.masked.assign(indices.begin(), indices.begin() + m);
  std::sort(plan.masked.begin(), plan.masked.end());
  plan.applied = true;
  return plan;
}

Tensor apply_mask(const Tensor& x, const MaskPlan& plan) {
  if (x.rank() != 3) {
    throw DimensionError("apply_mask: expected [C,T,D], got " + shape_str(x.shape()));
  }
  Tensor out = x;
  const std::size_t slab = x.dim(1) * x.dim(2);
  for (std::size_t c : plan.masked) {
    if (c >= x.dim(0)) {
      throw ContractError("apply_mask: channel " + std::to_string(c) + " out of range for " +
                          shape_str(x.shape()));
    }
    std::fill(out.data() + c * slab, out.data() + (c + 1) * slab, 0.0);
  }
  return out;
}

}  // namespace mfcca

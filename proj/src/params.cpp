// mfcca/params.cpp

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

#include "mfcca/params.hpp"

#include <cmath>

namespace mfcca {

Value Binder::operator()(const std::string& name) {
  auto it = store_.find(name);
  if (it == store_.end()) {
    throw ContractError("binder: no parameter named '" + name + "'");
  }
  Value v = graph_.leaf(it->second, trainable_);
  bound_.emplace_back(name, v);
  return v;
}

std::map<std::string, Tensor> Binder::gradients() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, v] : bound_) out[name] = graph_.gradient(v);
  return out;
}

void sgd_step(ParamStore& store, const Binder& binder, double lr) {
  for (const auto& [name, v] : binder.bound()) {
    Tensor g = v.graph->gradient(v);
    Tensor& p = store.at(name);
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
  }
}

Tensor glorot_init(std::vector<std::size_t> shape, std::size_t fan_in, std::size_t fan_out,
                   Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(std::move(shape));
  for (double& v : t.vec()) v = rng.uniform(-bound, bound);
  return t;
}

std::size_t param_count(const ParamStore& store) {
  std::size_t n = 0;
  for (const auto& [name, t] : store) n += t.size();
  return n;
}

}  // namespace mfcca

// mfcca/params.hpp

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

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mfcca/graph.hpp"
#include "mfcca/rng.hpp"
#include "mfcca/tensor.hpp"

namespace mfcca {

// Named parameter tensors. std::map keeps iteration order stable, which the
// deterministic update loop and checkpoint format rely on.
using ParamStore = std::map<std::string, Tensor>;

// Binds store tensors into one graph as differentiable leaves (or constants
// when trainable is false) and remembers the name -> leaf association so a
// training step can route gradients back to the store.
class Binder {
 public:
  Binder(Graph& graph, const ParamStore& store, bool trainable = true)
      : graph_(graph), store_(store), trainable_(trainable) {}

  Value operator()(const std::string& name);

  Graph& graph() { return graph_; }
  const std::vector<std::pair<std::string, Value>>& bound() const { return bound_; }

  // Gradients of the last backward() per bound parameter name.
  std::map<std::string, Tensor> gradients() const;

 private:
  Graph& graph_;
  const ParamStore& store_;
  bool trainable_;
  std::vector<std::pair<std::string, Value>> bound_;
};

// store[name] -= lr * grad for every parameter bound in this graph.
void sgd_step(ParamStore& store, const Binder& binder, double lr);

// Glorot-uniform weight init.
Tensor glorot_init(std::vector<std::size_t> shape, std::size_t fan_in, std::size_t fan_out,
                   Rng& rng);

std::size_t param_count(const ParamStore& store);

}  // namespace mfcca

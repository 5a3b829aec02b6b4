// mfcca/gradcheck.hpp

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
#include <functional>
#include <string>
#include <vector>

#include "mfcca/graph.hpp"
#include "mfcca/params.hpp"
#include "mfcca/tensor.hpp"

namespace mfcca {

using ScalarFn = std::function<double(const Tensor&)>;

// Central differences (f(x+eps e_i) - f(x-eps e_i)) / (2 eps) per coordinate.
// Independent of the reverse-mode tape; used as the gradient oracle.
// Throws NumericError when f returns a non-finite value.
Tensor finite_difference(const ScalarFn& f, const Tensor& x, double eps = 1e-4);

// Same, restricted to the listed flat coordinates (others left zero).
Tensor finite_difference_at(const ScalarFn& f, const Tensor& x,
                            const std::vector<std::size_t>& coords, double eps = 1e-4);

// max_i |analytic_i - numeric_i| / max(1, |numeric_i|), over the given
// coordinates (all coordinates when coords is empty).
double gradient_rel_error(const Tensor& analytic, const Tensor& numeric,
                          const std::vector<std::size_t>& coords = {});

// Builds a composite forward pass from graph leaves (one per input tensor).
using BuildFn = std::function<Value(Graph&, const std::vector<Value>&)>;

// Worst relative error between tape gradients and central differences for a
// composite readout sum(build(inputs) * W) with fixed random W. Inputs are
// all treated as differentiable. When max_coords_per_input > 0, only that
// many seeded-random coordinates per input are differenced (for large
// parameter tensors); 0 means every coordinate.
double composite_grad_error(const BuildFn& build, const std::vector<Tensor>& inputs,
                            std::uint64_t readout_seed, double eps = 1e-4,
                            std::size_t max_coords_per_input = 0);

// Same check for a forward pass parameterized through a Binder: analytic
// gradients for every store tensor the pass binds are compared against
// central differences of the store-perturbed readout. Data tensors can be
// checked too by placing them in the store under their own keys.
double store_grad_error(const std::function<Value(Graph&, Binder&)>& forward,
                        const ParamStore& store, std::uint64_t readout_seed,
                        std::size_t max_coords_per_param = 0, double eps = 1e-4);

// One verified gradient target.
struct GradCheckRow {
  std::string target;
  double max_rel_err = 0.0;
  bool pass = false;
};

// Analytic-vs-central-difference verification of every differentiable
// component: tensor primitives, the four attention variants, the encoder
// layer, channel fusion, the decoder, and the training loss. Threshold is
// 1e-4 relative at eps 1e-4.
std::vector<GradCheckRow> run_gradcheck_suite(std::uint64_t seed);

constexpr double kGradCheckTolerance = 1e-4;

}  // namespace mfcca

// mfcca/graph.hpp

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
#include <functional>
#include <string>
#include <vector>

#include "mfcca/tensor.hpp"

namespace mfcca {

class Graph;

// Handle to one node of a Graph. Cheap to copy; valid as long as the
// graph is alive. The tensor behind it is immutable once recorded.
struct Value {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& val() const;
  const std::vector<std::size_t>& shape() const { return val().shape(); }
  std::size_t rank() const { return val().rank(); }
  std::size_t dim(std::size_t axis) const { return val().dim(axis); }
};

// Reverse-mode tape. One graph records one forward computation; backward
// walks the tape once in reverse creation order. Graphs are not reused
// across forward calls. A graph instance is single-threaded; distinct
// graphs are independent.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Differentiable leaves are the targets backward() produces gradients for.
  Value leaf(Tensor v, bool requires_grad);
  Value constant(Tensor v) { return leaf(std::move(v), false); }

  // Gradient of a scalar loss w.r.t. every differentiable leaf. Leaves the
  // loss does not depend on keep zero gradients. Non-scalar loss is a
  // contract error.
  void backward(const Value& loss);

  // Gradient recorded for v by the last backward() (zeros when untouched).
  Tensor gradient(const Value& v) const;

  const Tensor& node_value(std::size_t id) const { return nodes_[id].value; }
  std::size_t node_count() const { return nodes_.size(); }

  // --- used by operation implementations ---
  using Backprop = std::function<void(Graph&, const Tensor& upstream)>;
  Value record(Tensor out, bool needs_grad, Backprop backprop);
  bool node_needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  // Accumulation buffer for a parent's gradient, zero-initialized on first use.
  Tensor& grad_buffer(std::size_t id);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool grad_set = false;
    bool needs_grad = false;
    Backprop backprop;
  };
  std::vector<Node> nodes_;
};

// --- differentiable primitives -------------------------------------------
// Every primitive validates shapes, evaluates eagerly, checks the result is
// finite, and records a backward rule on the owning graph.

Value add(Value a, Value b);               // same shape
Value sub(Value a, Value b);               // same shape
Value mul(Value a, Value b);               // same shape, elementwise
Value scale(Value x, double c);
Value add_bias(Value x, Value b);          // [..., N] + [N]
Value mul_vec_lastdim(Value x, Value v);   // [..., N] * [N]
Value add_const_2d(Value x, Tensor m);     // [..., R, S] + broadcast [R, S]
Value mul_const(Value x, Tensor c);        // same shape, no grad to c
Value matmul(Value a, Value b);            // [..,M,K] x [..,K,N], batch broadcast
Value softmax_lastdim(Value x);
Value log_softmax_lastdim(Value x);
Value conv2d(Value x, Value kernels, Value bias);  // same zero padding, odd kernel
Value layer_norm_lastdim(Value x, Value gain, Value bias, double eps = 1e-5);
Value swish(Value x);
Value sigmoid(Value x);
Value concat(const std::vector<Value>& parts, std::size_t axis);
Value permute(Value x, std::vector<std::size_t> axes);
Value zero_pad(Value x, std::size_t axis, std::size_t before, std::size_t after);
Value slice(Value x, std::size_t axis, std::size_t start, std::size_t len);
Value reshape(Value x, std::vector<std::size_t> shape);
Value embedding_lookup(Value table, const std::vector<int>& ids);  // [V,D] -> [L,D]
Value sum_all(Value x);                    // -> scalar
Value leave_one_out_mean(Value x);         // [C,T,D], C >= 2

// Gated linear unit along `axis`: split in halves a|b, return a * sigmoid(b).
Value glu(Value x, std::size_t axis);

// Transpose of the last two axes (any leading batch rank).
Value transpose_last2(Value x);

namespace testing {
// Fault-injection hook for gradient verification: while set to a primitive
// name ("swish", "matmul", ...), that primitive's backward rule is applied
// with flipped sign. Test-only; empty string disables.
void set_backward_sign_flip(const std::string& op);
const std::string& backward_sign_flip();
}  // namespace testing

}  // namespace mfcca

// mfcca/graph.cpp

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

#include "mfcca/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>

namespace mfcca {

namespace {

std::string g_sign_flip_op;

bool flip_active(const char* op) {
  return !g_sign_flip_op.empty() && g_sign_flip_op == op;
}

// Upstream gradient view; negated when the fault-injection hook targets `op`.
struct Upstream {
  const Tensor* p;
  Tensor storage;
  Upstream(const char* op, const Tensor& up) {
    if (flip_active(op)) {
      storage = up;
      for (double& v : storage.vec()) v = -v;
      p = &storage;
    } else {
      p = &up;
    }
  }
  const Tensor& get() const { return *p; }
};

Graph& same_graph(const Value& a, const Value& b, const char* op) {
  if (a.graph == nullptr || a.graph != b.graph) {
    throw ContractError(std::string(op) + ": operands belong to different graphs");
  }
  return *a.graph;
}

Graph& graph_of(const Value& a, const char* op) {
  if (a.graph == nullptr) throw ContractError(std::string(op) + ": null graph");
  return *a.graph;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

double sigmoid_d(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Broadcast plan for the batch prefixes of a matmul.
struct BatchPlan {
  std::vector<std::size_t> out_batch;
  std::vector<std::size_t> a_strides;  // slab units; 0 on broadcast axes
  std::vector<std::size_t> b_strides;
  std::size_t count = 1;

  std::size_t a_offset(std::size_t flat) const { return offset(flat, a_strides); }
  std::size_t b_offset(std::size_t flat) const { return offset(flat, b_strides); }

 private:
  std::size_t offset(std::size_t flat, const std::vector<std::size_t>& strides) const {
    std::size_t off = 0;
    for (std::size_t i = out_batch.size(); i-- > 0;) {
      std::size_t idx = flat % out_batch[i];
      flat /= out_batch[i];
      off += idx * strides[i];
    }
    return off;
  }
};

BatchPlan make_batch_plan(const std::vector<std::size_t>& ash, const std::vector<std::size_t>& bsh,
                          const char* op) {
  const std::size_t ra = ash.size() - 2, rb = bsh.size() - 2;
  const std::size_t n = std::max(ra, rb);
  BatchPlan plan;
  plan.out_batch.resize(n);
  std::vector<std::size_t> da(n, 1), db(n, 1);
  for (std::size_t i = 0; i < ra; ++i) da[n - ra + i] = ash[i];
  for (std::size_t i = 0; i < rb; ++i) db[n - rb + i] = bsh[i];
  for (std::size_t i = 0; i < n; ++i) {
    if (da[i] != db[i] && da[i] != 1 && db[i] != 1) {
      throw DimensionError(std::string(op) + ": batch prefixes not broadcastable, " +
                           shape_str(ash) + " vs " + shape_str(bsh));
    }
    plan.out_batch[i] = std::max(da[i], db[i]);
    plan.count *= plan.out_batch[i];
  }
  plan.a_strides.assign(n, 0);
  plan.b_strides.assign(n, 0);
  std::size_t sa = 1, sb = 1;
  for (std::size_t i = n; i-- > 0;) {
    plan.a_strides[i] = (da[i] == 1) ? 0 : sa;
    plan.b_strides[i] = (db[i] == 1) ? 0 : sb;
    sa *= da[i];
    sb *= db[i];
  }
  return plan;
}

// outer/inner decomposition around one axis
struct AxisSplit {
  std::size_t outer = 1, extent = 0, inner = 1;
};

AxisSplit split_axis(const std::vector<std::size_t>& shape, std::size_t axis) {
  AxisSplit s;
  s.extent = shape[axis];
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

namespace testing {
void set_backward_sign_flip(const std::string& op) { g_sign_flip_op = op; }
const std::string& backward_sign_flip() { return g_sign_flip_op; }
}  // namespace testing

const Tensor& Value::val() const { return graph->node_value(id); }

Value Graph::leaf(Tensor v, bool requires_grad) {
  Node n;
  n.value = std::move(v);
  n.needs_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Value{this, nodes_.size() - 1};
}

Value Graph::record(Tensor out, bool needs_grad, Backprop backprop) {
  Node n;
  n.value = std::move(out);
  n.needs_grad = needs_grad;
  if (needs_grad) n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return Value{this, nodes_.size() - 1};
}

Tensor& Graph::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.grad_set) {
    n.grad = Tensor::zeros(n.value.shape());
    n.grad_set = true;
  }
  return n.grad;
}

void Graph::backward(const Value& loss) {
  if (loss.graph != this) throw ContractError("backward: loss from another graph");
  if (loss.val().rank() != 0) {
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_str(loss.val().shape()));
  }
  for (Node& n : nodes_) {
    n.grad = Tensor();
    n.grad_set = false;
  }
  grad_buffer(loss.id)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad_set && n.backprop) n.backprop(*this, n.grad);
  }
}

Tensor Graph::gradient(const Value& v) const {
  if (v.graph != this) throw ContractError("gradient: value from another graph");
  const Node& n = nodes_[v.id];
  if (!n.grad_set) return Tensor::zeros(n.value.shape());
  return n.grad;
}

// --- elementwise / broadcast ----------------------------------------------

Value add(Value a, Value b) {
  Graph& g = same_graph(a, b, "add");
  require_same_shape(a.val(), b.val(), "add");
  Tensor out = a.val();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.val()[i];
  check_finite(out, "add");
  bool ng = g.node_needs_grad(a.id) || g.node_needs_grad(b.id);
  std::size_t ia = a.id, ib = b.id;
  return g.record(std::move(out), ng, [ia, ib](Graph& gg, const Tensor& up) {
    Upstream u("add", up);
    for (std::size_t pid : {ia, ib}) {
      if (!gg.node_needs_grad(pid)) continue;
      Tensor& gb = gg.grad_buffer(pid);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += u.get()[i];
    }
  });
}

Value sub(Value a, Value b) {
  Graph& g = same_graph(a, b, "sub");
  require_same_shape(a.val(), b.val(), "sub");
  Tensor out = a.val();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.val()[i];
  check_finite(out, "sub");
  bool ng = g.node_needs_grad(a.id) || g.node_needs_grad(b.id);
  std::size_t ia = a.id, ib = b.id;
  return g.record(std::move(out), ng, [ia, ib](Graph& gg, const Tensor& up) {
    Upstream u("sub", up);
    if (gg.node_needs_grad(ia)) {
      Tensor& gb = gg.grad_buffer(ia);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += u.get()[i];
    }
    if (gg.node_needs_grad(ib)) {
      Tensor& gb = gg.grad_buffer(ib);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= u.get()[i];
    }
  });
}

Value mul(Value a, Value b) {
  Graph& g = same_graph(a, b, "mul");
  require_same_shape(a.val(), b.val(), "mul");
  Tensor out = a.val();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.val()[i];
  check_finite(out, "mul");
  bool ng = g.node_needs_grad(a.id) || g.node_needs_grad(b.id);
  std::size_t ia = a.id, ib = b.id;
  return g.record(std::move(out), ng, [ia, ib](Graph& gg, const Tensor& up) {
    Upstream u("mul", up);
    const Tensor& av = gg.node_value(ia);
    const Tensor& bv = gg.node_value(ib);
    if (gg.node_needs_grad(ia)) {
      Tensor& gb = gg.grad_buffer(ia);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += u.get()[i] * bv[i];
    }
    if (gg.node_needs_grad(ib)) {
      Tensor& gb = gg.grad_buffer(ib);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += u.get()[i] * av[i];
    }
  });
}

Value scale(Value x, double c) {
  Graph& g = graph_of(x, "scale");
  Tensor out = x.val();
  for (double& v : out.vec()) v *= c;
  check_finite(out, "scale");
  std::size_t ix = x.id;
  return g.record(std::move(out), g.node_needs_grad(x.id), [ix, c](Graph& gg, const Tensor& up) {
    Upstream u("scale", up);
    Tensor& gb = gg.grad_buffer(ix);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += c * u.get()[i];
  });
}

Value add_bias(Value x, Value b) {
  Graph& g = same_graph(x, b, "add_bias");
  const Tensor& xv = x.val();
  const Tensor& bv = b.val();
  if (xv.rank() < 1 || bv.rank() != 1 || xv.shape().back() != bv.dim(0)) {
    throw DimensionError("add_bias: shapes " + shape_str(xv.shape()) + " vs " +
                         shape_str(bv.shape()));
  }
  const std::size_t n = bv.dim(0), rows = xv.size() / n;
  Tensor out = xv;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] += bv[j];
  check_finite(out, "add_bias");
  bool ng = g.node_needs_grad(x.id) || g.node_needs_grad(b.id);
  std::size_t ix = x.id, ib = b.id;
  return g.record(std::move(out), ng, [ix, ib, rows, n](Graph& gg, const Tensor& up) {
    Upstream u("add_bias", up);
    if (gg.node_needs_grad(ix)) {
      Tensor& gb = gg.grad_buffer(ix);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += u.get()[i];
    }
    if (gg.node_needs_grad(ib)) {
      Tensor& gb = gg.grad_buffer(ib);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) gb[j] += u.get()[r * n + j];
    }
  });
}

Value mul_vec_lastdim(Value x, Value v) {
  Graph& g = same_graph(x, v, "mul_vec_lastdim");
  const Tensor& xv = x.val();
  const Tensor& vv = v.val();
  if (xv.rank() < 1 || vv.rank() != 1 || xv.shape().back() != vv.dim(0)) {
    throw DimensionError("mul_vec_lastdim: shapes " + shape_str(xv.shape()) + " vs " +
                         shape_str(vv.shape()));
  }
  const std::size_t n = vv.dim(0), rows = xv.size() / n;
  Tensor out = xv;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] *= vv[j];
  check_finite(out, "mul_vec_lastdim");
  bool ng = g.node_needs_grad(x.id) || g.node_needs_grad(v.id);
  std::size_t ix = x.id, iv = v.id;
  return g.record(std::move(out), ng, [ix, iv, rows, n](Graph& gg, const Tensor& up) {
    Upstream u("mul_vec_lastdim", up);
    const Tensor& xval = gg.node_value(ix);
    const Tensor& vval = gg.node_value(iv);
    if (gg.node_needs_grad(ix)) {
      Tensor& gb = gg.grad_buffer(ix);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) gb[r * n + j] += u.get()[r * n + j] * vval[j];
    }
    if (gg.node_needs_grad(iv)) {
      Tensor& gb = gg.grad_buffer(iv);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) gb[j] += u.get()[r * n + j] * xval[r * n + j];
    }
  });
}

Value add_const_2d(Value x, Tensor m) {
  Graph& g = graph_of(x, "add_const_2d");
  const Tensor& xv = x.val();
  if (xv.rank() < 2 || m.rank() != 2 || xv.shape()[xv.rank() - 2] != m.dim(0) ||
      xv.shape().back() != m.dim(1)) {
    throw DimensionError("add_const_2d: shapes " + shape_str(xv.shape()) + " vs " +
                         shape_str(m.shape()));
  }
  const std::size_t slab = m.size(), batches = xv.size() / slab;
  Tensor out = xv;
  for (std::size_t e = 0; e < batches; ++e)
    for (std::size_t i = 0; i < slab; ++i) out[e * slab + i] += m[i];
  check_finite(out, "add_const_2d");
  std::size_t ix = x.id;
  return g.record(std::move(out), g.node_needs_grad(x.id), [ix](Graph& gg, const Tensor& up) {
    Upstream u("add_const_2d", up);
    Tensor& gb = gg.grad_buffer(ix);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += u.get()[i];
  });
}

Value mul_const(Value x, Tensor c) {
  Graph& g = graph_of(x, "mul_const");
  require_same_shape(x.val(), c, "mul_const");
  Tensor out = x.val();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c[i];
  check_finite(out, "mul_const");
  std::size_t ix = x.id;
  auto cp = std::make_shared<Tensor>(std::move(c));
  return g.record(std::move(out), g.node_needs_grad(x.id), [ix, cp](Graph& gg, const Tensor& up) {
    Upstream u("mul_const", up);
    Tensor& gb = gg.grad_buffer(ix);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += u.get()[i] * (*cp)[i];
  });
}

// --- matmul -----------------------------------------------------------------

Value matmul(Value a, Value b) {
  Graph& g = same_graph(a, b, "matmul");
  const Tensor& av = a.val();
  const Tensor& bv = b.val();
  if (av.rank() < 2 || bv.rank() < 2) {
    throw DimensionError("matmul: operands must have rank >= 2, got " + shape_str(av.shape()) +
                         " and " + shape_str(bv.shape()));
  }
  const std::size_t m = av.shape()[av.rank() - 2], k = av.shape().back();
  const std::size_t k2 = bv.shape()[bv.rank() - 2], n = bv.shape().back();
  if (k != k2) {
    throw DimensionError("matmul: inner extents differ, " + shape_str(av.shape()) + " x " +
                         shape_str(bv.shape()));
  }
  BatchPlan plan = make_batch_plan(av.shape(), bv.shape(), "matmul");
  std::vector<std::size_t> out_shape = plan.out_batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor out(out_shape);
  const std::size_t a_slab = m * k, b_slab = k * n, c_slab = m * n;
  for (std::size_t e = 0; e < plan.count; ++e) {
    const double* A = av.data() + plan.a_offset(e) * a_slab;
    const double* B = bv.data() + plan.b_offset(e) * b_slab;
    double* C = out.data() + e * c_slab;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += A[i * k + p] * B[p * n + j];
        C[i * n + j] = acc;
      }
    }
  }
  check_finite(out, "matmul");
  bool ng = g.node_needs_grad(a.id) || g.node_needs_grad(b.id);
  std::size_t ia = a.id, ib = b.id;
  return g.record(std::move(out), ng,
                  [ia, ib, plan, m, k, n, a_slab, b_slab, c_slab](Graph& gg, const Tensor& up) {
    Upstream u("matmul", up);
    const Tensor& A_all = gg.node_value(ia);
    const Tensor& B_all = gg.node_value(ib);
    const bool need_a = gg.node_needs_grad(ia), need_b = gg.node_needs_grad(ib);
    Tensor* ga = need_a ? &gg.grad_buffer(ia) : nullptr;
    Tensor* gb = need_b ? &gg.grad_buffer(ib) : nullptr;
    for (std::size_t e = 0; e < plan.count; ++e) {
      const double* A = A_all.data() + plan.a_offset(e) * a_slab;
      const double* B = B_all.data() + plan.b_offset(e) * b_slab;
      const double* U = u.get().data() + e * c_slab;
      if (need_a) {
        double* dA = ga->data() + plan.a_offset(e) * a_slab;
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += U[i * n + j] * B[p * n + j];
            dA[i * k + p] += acc;
          }
      }
      if (need_b) {
        double* dB = gb->data() + plan.b_offset(e) * b_slab;
        for (std::size_t p = 0; p < k; ++p)
          for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < m; ++i) acc += A[i * k + p] * U[i * n + j];
            dB[p * n + j] += acc;
          }
      }
    }
  });
}

// --- softmax family ----------------------------------------------------------

Value softmax_lastdim(Value x) {
  Graph& g = graph_of(x, "softmax_lastdim");
  const Tensor& xv = x.val();
  if (xv.rank() < 1 || xv.shape().back() == 0) {
    throw DimensionError("softmax_lastdim: empty last dimension in shape " +
                         shape_str(xv.shape()));
  }
  const std::size_t n = xv.shape().back(), rows = xv.size() / n;
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * n;
    double* o = out.data() + r * n;
    double mx = in[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, in[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = std::exp(in[j] - mx);
      sum += o[j];
    }
    for (std::size_t j = 0; j < n; ++j) o[j] /= sum;
  }
  check_finite(out, "softmax_lastdim");
  std::size_t ix = x.id;
  std::size_t oid = g.node_count();
  return g.record(std::move(out), g.node_needs_grad(x.id),
                  [ix, oid, rows, n](Graph& gg, const Tensor& up) {
    Upstream u("softmax_lastdim", up);
    const Tensor& y = gg.node_value(oid);
    Tensor& gb = gg.grad_buffer(ix);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* yr = y.data() + r * n;
      const double* ur = u.get().data() + r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += ur[j] * yr[j];
      double* gr = gb.data() + r * n;
      for (std::size_t j = 0; j < n; ++j) gr[j] += yr[j] * (ur[j] - dot);
    }
  });
}

Value log_softmax_lastdim(Value x) {
  Graph& g = graph_of(x, "log_softmax_lastdim");
  const Tensor& xv = x.val();
  if (xv.rank() < 1 || xv.shape().back() == 0) {
    throw DimensionError("log_softmax_lastdim: empty last dimension in shape " +
                         shape_str(xv.shape()));
  }
  const std::size_t n = xv.shape().back(), rows = xv.size() / n;
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * n;
    double* o = out.data() + r * n;
    double mx = in[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, in[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) sum += std::exp(in[j] - mx);
    const double lse = mx + std::log(sum);
    for (std::size_t j = 0; j < n; ++j) o[j] = in[j] - lse;
  }
  check_finite(out, "log_softmax_lastdim");
  std::size_t ix = x.id;
  std::size_t oid = g.node_count();
  return g.record(std::move(out), g.node_needs_grad(x.id),
                  [ix, oid, rows, n](Graph& gg, const Tensor& up) {
    Upstream u("log_softmax_lastdim", up);
    const Tensor& y = gg.node_value(oid);
    Tensor& gb = gg.grad_buffer(ix);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* yr = y.data() + r * n;
      const double* ur = u.get().data() + r * n;
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) total += ur[j];
      double* gr = gb.data() + r * n;
      for (std::size_t j = 0; j < n; ++j) gr[j] += ur[j] - std::exp(yr[j]) * total;
    }
  });
}

// --- conv2d ------------------------------------------------------------------

Value conv2d(Value x, Value kernels, Value bias) {
  Graph& g = same_graph(x, kernels, "conv2d");
  same_graph(x, bias, "conv2d");
  const Tensor& xv = x.val();
  const Tensor& kv = kernels.val();
  const Tensor& bv = bias.val();
  if (xv.rank() != 3 || kv.rank() != 4 || bv.rank() != 1) {
    throw DimensionError("conv2d: expected x[Cin,H,W], kernels[Cout,Cin,kh,kw], bias[Cout]; got " +
                         shape_str(xv.shape()) + ", " + shape_str(kv.shape()) + ", " +
                         shape_str(bv.shape()));
  }
  const std::size_t cin = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
  const std::size_t cout = kv.dim(0), kh = kv.dim(2), kw = kv.dim(3);
  if (kv.dim(1) != cin) {
    throw DimensionError("conv2d: input channel mismatch, x " + shape_str(xv.shape()) +
                         " vs kernels " + shape_str(kv.shape()));
  }
  if (bv.dim(0) != cout) {
    throw DimensionError("conv2d: bias extent " + shape_str(bv.shape()) + " vs kernels " +
                         shape_str(kv.shape()));
  }
  if (kh % 2 == 0 || kw % 2 == 0) {
    throw DimensionError("conv2d: kernel extents must be odd, got " + shape_str(kv.shape()));
  }
  const std::size_t ph = kh / 2, pw = kw / 2;
  Tensor out({cout, H, W});
  // cross-correlation, zero same-padding
  for (std::size_t o = 0; o < cout; ++o) {
    for (std::size_t i = 0; i < H; ++i) {
      for (std::size_t j = 0; j < W; ++j) {
        double acc = bv[o];
        for (std::size_t c = 0; c < cin; ++c) {
          for (std::size_t u2 = 0; u2 < kh; ++u2) {
            const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i + u2) -
                                      static_cast<std::ptrdiff_t>(ph);
            if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t v2 = 0; v2 < kw; ++v2) {
              const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(j + v2) -
                                        static_cast<std::ptrdiff_t>(pw);
              if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(W)) continue;
              acc += xv(c, static_cast<std::size_t>(ii), static_cast<std::size_t>(jj)) *
                     kv(o, c, u2, v2);
            }
          }
        }
        out(o, i, j) = acc;
      }
    }
  }
  check_finite(out, "conv2d");
  bool ng = g.node_needs_grad(x.id) || g.node_needs_grad(kernels.id) ||
            g.node_needs_grad(bias.id);
  std::size_t ix = x.id, ik = kernels.id, ib = bias.id;
  return g.record(std::move(out), ng,
                  [ix, ik, ib, cin, cout, H, W, kh, kw, ph, pw](Graph& gg, const Tensor& up) {
    Upstream u("conv2d", up);
    const Tensor& X = gg.node_value(ix);
    const Tensor& K = gg.node_value(ik);
    const Tensor& U = u.get();
    if (gg.node_needs_grad(ib)) {
      Tensor& gb = gg.grad_buffer(ib);
      for (std::size_t o = 0; o < cout; ++o) {
        double acc = 0.0;
        const double* base = U.data() + o * H * W;
        for (std::size_t i = 0; i < H * W; ++i) acc += base[i];
        gb[o] += acc;
      }
    }
    const bool need_x = gg.node_needs_grad(ix), need_k = gg.node_needs_grad(ik);
    if (!need_x && !need_k) return;
    Tensor* gx = need_x ? &gg.grad_buffer(ix) : nullptr;
    Tensor* gk = need_k ? &gg.grad_buffer(ik) : nullptr;
    for (std::size_t o = 0; o < cout; ++o) {
      for (std::size_t i = 0; i < H; ++i) {
        for (std::size_t j = 0; j < W; ++j) {
          const double uv = U(o, i, j);
          if (uv == 0.0) continue;
          for (std::size_t c = 0; c < cin; ++c) {
            for (std::size_t u2 = 0; u2 < kh; ++u2) {
              const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i + u2) -
                                        static_cast<std::ptrdiff_t>(ph);
              if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(H)) continue;
              for (std::size_t v2 = 0; v2 < kw; ++v2) {
                const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(j + v2) -
                                          static_cast<std::ptrdiff_t>(pw);
                if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(W)) continue;
                const std::size_t si = static_cast<std::size_t>(ii);
                const std::size_t sj = static_cast<std::size_t>(jj);
                if (need_x) (*gx)(c, si, sj) += uv * K(o, c, u2, v2);
                if (need_k) (*gk)(o, c, u2, v2) += uv * X(c, si, sj);
              }
            }
          }
        }
      }
    }
  });
}

// --- normalization / activations ----------------------------------------------

Value layer_norm_lastdim(Value x, Value gain, Value bias, double eps) {
  Graph& g = same_graph(x, gain, "layer_norm");
  same_graph(x, bias, "layer_norm");
  const Tensor& xv = x.val();
  const Tensor& gv = gain.val();
  const Tensor& bv = bias.val();
  if (xv.rank() < 1 || gv.rank() != 1 || bv.rank() != 1 ||
      gv.dim(0) != xv.shape().back() || bv.dim(0) != xv.shape().back()) {
    throw DimensionError("layer_norm: shapes " + shape_str(xv.shape()) + ", " +
                         shape_str(gv.shape()) + ", " + shape_str(bv.shape()));
  }
  const std::size_t n = xv.shape().back(), rows = xv.size() / n;
  Tensor out(xv.shape());
  auto stats = std::make_shared<std::vector<double>>(2 * rows);  // mu, inv_std per row
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += in[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(n);
    const double istd = 1.0 / std::sqrt(var + eps);
    (*stats)[2 * r] = mu;
    (*stats)[2 * r + 1] = istd;
    double* o = out.data() + r * n;
    for (std::size_t j = 0; j < n; ++j) o[j] = gv[j] * (in[j] - mu) * istd + bv[j];
  }
  check_finite(out, "layer_norm");
  bool ng = g.node_needs_grad(x.id) || g.node_needs_grad(gain.id) || g.node_needs_grad(bias.id);
  std::size_t ix = x.id, ig = gain.id, ib = bias.id;
  return g.record(std::move(out), ng,
                  [ix, ig, ib, rows, n, stats](Graph& gg, const Tensor& up) {
    Upstream u("layer_norm", up);
    const Tensor& X = gg.node_value(ix);
    const Tensor& G = gg.node_value(ig);
    const bool need_x = gg.node_needs_grad(ix);
    const bool need_g = gg.node_needs_grad(ig);
    const bool need_b = gg.node_needs_grad(ib);
    Tensor* gx = need_x ? &gg.grad_buffer(ix) : nullptr;
    Tensor* ggain = need_g ? &gg.grad_buffer(ig) : nullptr;
    Tensor* gbias = need_b ? &gg.grad_buffer(ib) : nullptr;
    std::vector<double> xhat(n), t(n);
    for (std::size_t r = 0; r < rows; ++r) {
      const double mu = (*stats)[2 * r], istd = (*stats)[2 * r + 1];
      const double* in = X.data() + r * n;
      const double* ur = u.get().data() + r * n;
      for (std::size_t j = 0; j < n; ++j) xhat[j] = (in[j] - mu) * istd;
      if (need_g)
        for (std::size_t j = 0; j < n; ++j) (*ggain)[j] += ur[j] * xhat[j];
      if (need_b)
        for (std::size_t j = 0; j < n; ++j) (*gbias)[j] += ur[j];
      if (need_x) {
        double s1 = 0.0, s2 = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          t[j] = ur[j] * G[j];
          s1 += t[j];
          s2 += t[j] * xhat[j];
        }
        const double inv_n = 1.0 / static_cast<double>(n);
        double* gr = gx->data() + r * n;
        for (std::size_t j = 0; j < n; ++j)
          gr[j] += istd * (t[j] - s1 * inv_n - xhat[j] * s2 * inv_n);
      }
    }
  });
}

Value swish(Value x) {
  Graph& g = graph_of(x, "swish");
  Tensor out = x.val();
  for (double& v : out.vec()) v = v * sigmoid_d(v);
  check_finite(out, "swish");
  std::size_t ix = x.id;
  return g.record(std::move(out), g.node_needs_grad(x.id), [ix](Graph& gg, const Tensor& up) {
    Upstream u("swish", up);
    const Tensor& X = gg.node_value(ix);
    Tensor& gb = gg.grad_buffer(ix);
    for (std::size_t i = 0; i < gb.size(); ++i) {
      const double s = sigmoid_d(X[i]);
      gb[i] += u.get()[i] * s * (1.0 + X[i] * (1.0 - s));
    }
  });
}

Value sigmoid(Value x) {
  Graph& g = graph_of(x, "sigmoid");
  Tensor out = x.val();
  for (double& v : out.vec()) v = sigmoid_d(v);
  check_finite(out, "sigmoid");
  std::size_t ix = x.id;
  std::size_t oid = g.node_count();
  return g.record(std::move(out), g.node_needs_grad(x.id), [ix, oid](Graph& gg, const Tensor& up) {
    Upstream u("sigmoid", up);
    const Tensor& y = gg.node_value(oid);
    Tensor& gb = gg.grad_buffer(ix);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += u.get()[i] * y[i] * (1.0 - y[i]);
  });
}

// --- structural ops -------------------------------------------------------------

Value concat(const std::vector<Value>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no operands");
  Graph& g = graph_of(parts[0], "concat");
  const std::size_t rank = parts[0].rank();
  if (axis >= rank) {
    throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
  }
  std::vector<std::size_t> out_shape = parts[0].shape();
  std::size_t total = 0;
  for (const Value& p : parts) {
    same_graph(parts[0], p, "concat");
    if (p.rank() != rank) {
      throw DimensionError("concat: rank mismatch " + shape_str(parts[0].shape()) + " vs " +
                           shape_str(p.shape()));
    }
    for (std::size_t i = 0; i < rank; ++i) {
      if (i != axis && p.shape()[i] != out_shape[i]) {
        throw DimensionError("concat: shape mismatch off-axis, " + shape_str(parts[0].shape()) +
                             " vs " + shape_str(p.shape()));
      }
    }
    total += p.shape()[axis];
  }
  out_shape[axis] = total;
  Tensor out(out_shape);
  AxisSplit s = split_axis(out_shape, axis);
  std::vector<std::size_t> part_ids(parts.size());
  std::vector<std::size_t> extents(parts.size());
  bool ng = false;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    part_ids[pi] = parts[pi].id;
    extents[pi] = parts[pi].shape()[axis];
    ng = ng || g.node_needs_grad(parts[pi].id);
  }
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::size_t written = 0;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
      const Tensor& pv = parts[pi].val();
      const std::size_t block = extents[pi] * s.inner;
      std::memcpy(out.data() + (o * s.extent + written) * s.inner,
                  pv.data() + o * block, block * sizeof(double));
      written += extents[pi];
    }
  }
  return g.record(std::move(out), ng,
                  [part_ids, extents, s](Graph& gg, const Tensor& up) {
    Upstream u("concat", up);
    std::size_t written = 0;
    for (std::size_t pi = 0; pi < part_ids.size(); ++pi) {
      const std::size_t block = extents[pi] * s.inner;
      if (gg.node_needs_grad(part_ids[pi])) {
        Tensor& gb = gg.grad_buffer(part_ids[pi]);
        for (std::size_t o = 0; o < s.outer; ++o) {
          const double* src = u.get().data() + (o * s.extent + written) * s.inner;
          double* dst = gb.data() + o * block;
          for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
        }
      }
      written += extents[pi];
    }
  });
}

Value permute(Value x, std::vector<std::size_t> axes) {
  Graph& g = graph_of(x, "permute");
  const Tensor& xv = x.val();
  const std::size_t rank = xv.rank();
  if (axes.size() != rank) {
    throw DimensionError("permute: got " + std::to_string(axes.size()) + " axes for rank " +
                         std::to_string(rank));
  }
  std::vector<bool> seen(rank, false);
  for (std::size_t a : axes) {
    if (a >= rank || seen[a]) throw DimensionError("permute: axes are not a permutation");
    seen[a] = true;
  }
  std::vector<std::size_t> out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = xv.shape()[axes[i]];
  // in strides (full, incl. last)
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * xv.shape()[i];
  std::vector<std::size_t> map_strides(rank);
  for (std::size_t i = 0; i < rank; ++i) map_strides[i] = in_strides[axes[i]];
  Tensor out(out_shape);
  const std::size_t total = out.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t in_off = 0;
  for (std::size_t f = 0; f < total; ++f) {
    out[f] = xv[in_off];
    for (std::size_t i = rank; i-- > 0;) {
      ++idx[i];
      in_off += map_strides[i];
      if (idx[i] < out_shape[i]) break;
      in_off -= idx[i] * map_strides[i];
      idx[i] = 0;
    }
  }
  std::size_t ix = x.id;
  return g.record(std::move(out), g.node_needs_grad(x.id),
                  [ix, out_shape, map_strides](Graph& gg, const Tensor& up) {
    Upstream u("permute", up);
    Tensor& gb = gg.grad_buffer(ix);
    const std::size_t rank = out_shape.size();
    const std::size_t total = u.get().size();
    std::vector<std::size_t> idx(rank, 0);
    std::size_t in_off = 0;
    for (std::size_t f = 0; f < total; ++f) {
      gb[in_off] += u.get()[f];
      for (std::size_t i = rank; i-- > 0;) {
        ++idx[i];
        in_off += map_strides[i];
        if (idx[i] < out_shape[i]) break;
        in_off -= idx[i] * map_strides[i];
        idx[i] = 0;
      }
    }
  });
}

Value transpose_last2(Value x) {
  const std::size_t rank = x.rank();
  if (rank < 2) throw DimensionError("transpose_last2: rank < 2");
  std::vector<std::size_t> axes(rank);
  for (std::size_t i = 0; i < rank; ++i) axes[i] = i;
  std::swap(axes[rank - 1], axes[rank - 2]);
  return permute(x, axes);
}

Value zero_pad(Value x, std::size_t axis, std::size_t before, std::size_t after) {
  Graph& g = graph_of(x, "zero_pad");
  const Tensor& xv = x.val();
  if (axis >= xv.rank()) {
    throw DimensionError("zero_pad: axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(xv.shape()));
  }
  std::vector<std::size_t> out_shape = xv.shape();
  out_shape[axis] += before + after;
  AxisSplit si = split_axis(xv.shape(), axis);
  Tensor out(out_shape);
  const std::size_t out_extent = out_shape[axis];
  for (std::size_t o = 0; o < si.outer; ++o) {
    std::memcpy(out.data() + (o * out_extent + before) * si.inner,
                xv.data() + o * si.extent * si.inner, si.extent * si.inner * sizeof(double));
  }
  std::size_t ix = x.id;
  return g.record(std::move(out), g.node_needs_grad(x.id),
                  [ix, si, before, out_extent](Graph& gg, const Tensor& up) {
    Upstream u("zero_pad", up);
    Tensor& gb = gg.grad_buffer(ix);
    for (std::size_t o = 0; o < si.outer; ++o) {
      const double* src = u.get().data() + (o * out_extent + before) * si.inner;
      double* dst = gb.data() + o * si.extent * si.inner;
      for (std::size_t i = 0; i < si.extent * si.inner; ++i) dst[i] += src[i];
    }
  });
}

Value slice(Value x, std::size_t axis, std::size_t start, std::size_t len) {
  Graph& g = graph_of(x, "slice");
  const Tensor& xv = x.val();
  if (axis >= xv.rank()) {
    throw DimensionError("slice: axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(xv.shape()));
  }
  if (start + len > xv.shape()[axis]) {
    throw DimensionError("slice: range [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") exceeds extent " +
                         std::to_string(xv.shape()[axis]));
  }
  std::vector<std::size_t> out_shape = xv.shape();
  out_shape[axis] = len;
  AxisSplit si = split_axis(xv.shape(), axis);
  Tensor out(out_shape);
  for (std::size_t o = 0; o < si.outer; ++o) {
    std::memcpy(out.data() + o * len * si.inner,
                xv.data() + (o * si.extent + start) * si.inner, len * si.inner * sizeof(double));
  }
  std::size_t ix = x.id;
  return g.record(std::move(out), g.node_needs_grad(x.id),
                  [ix, si, start, len](Graph& gg, const Tensor& up) {
    Upstream u("slice", up);
    Tensor& gb = gg.grad_buffer(ix);
    for (std::size_t o = 0; o < si.outer; ++o) {
      const double* src = u.get().data() + o * len * si.inner;
      double* dst = gb.data() + (o * si.extent + start) * si.inner;
      for (std::size_t i = 0; i < len * si.inner; ++i) dst[i] += src[i];
    }
  });
}

Value reshape(Value x, std::vector<std::size_t> shape) {
  Graph& g = graph_of(x, "reshape");
  const Tensor& xv = x.val();
  if (shape_product(shape) != xv.size()) {
    throw DimensionError("reshape: " + shape_str(xv.shape()) + " -> " + shape_str(shape) +
                         " changes element count");
  }
  Tensor out(shape, xv.vec());
  std::size_t ix = x.id;
  return g.record(std::move(out), g.node_needs_grad(x.id), [ix](Graph& gg, const Tensor& up) {
    Upstream u("reshape", up);
    Tensor& gb = gg.grad_buffer(ix);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += u.get()[i];
  });
}

Value embedding_lookup(Value table, const std::vector<int>& ids) {
  Graph& g = graph_of(table, "embedding_lookup");
  const Tensor& tv = table.val();
  if (tv.rank() != 2) {
    throw DimensionError("embedding_lookup: table must be rank 2, got " + shape_str(tv.shape()));
  }
  const std::size_t v = tv.dim(0), d = tv.dim(1), L = ids.size();
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= v) {
      throw ContractError("embedding_lookup: id " + std::to_string(id) + " outside table of " +
                          std::to_string(v) + " rows");
    }
  }
  Tensor out({L, d});
  for (std::size_t l = 0; l < L; ++l) {
    std::memcpy(out.data() + l * d, tv.data() + static_cast<std::size_t>(ids[l]) * d,
                d * sizeof(double));
  }
  std::size_t it = table.id;
  auto ids_copy = std::make_shared<std::vector<int>>(ids);
  return g.record(std::move(out), g.node_needs_grad(table.id),
                  [it, ids_copy, d](Graph& gg, const Tensor& up) {
    Upstream u("embedding_lookup", up);
    Tensor& gb = gg.grad_buffer(it);
    for (std::size_t l = 0; l < ids_copy->size(); ++l) {
      const double* src = u.get().data() + l * d;
      double* dst = gb.data() + static_cast<std::size_t>((*ids_copy)[l]) * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

Value sum_all(Value x) {
  Graph& g = graph_of(x, "sum_all");
  double acc = 0.0;
  for (double v : x.val().vec()) acc += v;
  Tensor out = Tensor::scalar(acc);
  check_finite(out, "sum_all");
  std::size_t ix = x.id;
  return g.record(std::move(out), g.node_needs_grad(x.id), [ix](Graph& gg, const Tensor& up) {
    Upstream u("sum_all", up);
    Tensor& gb = gg.grad_buffer(ix);
    const double uv = u.get()[0];
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += uv;
  });
}

Value leave_one_out_mean(Value x) {
  Graph& g = graph_of(x, "leave_one_out_mean");
  const Tensor& xv = x.val();
  if (xv.rank() != 3) {
    throw DimensionError("leave_one_out_mean: expected [C,T,D], got " + shape_str(xv.shape()));
  }
  const std::size_t c = xv.dim(0), slab = xv.dim(1) * xv.dim(2);
  if (c < 2) {
    throw ContractError("leave_one_out_mean: undefined for a single channel");
  }
  std::vector<double> total(slab, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* src = xv.data() + ch * slab;
    for (std::size_t i = 0; i < slab; ++i) total[i] += src[i];
  }
  Tensor out(xv.shape());
  const double inv = 1.0 / static_cast<double>(c - 1);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* src = xv.data() + ch * slab;
    double* dst = out.data() + ch * slab;
    for (std::size_t i = 0; i < slab; ++i) dst[i] = (total[i] - src[i]) * inv;
  }
  check_finite(out, "leave_one_out_mean");
  std::size_t ix = x.id;
  return g.record(std::move(out), g.node_needs_grad(x.id),
                  [ix, c, slab, inv](Graph& gg, const Tensor& up) {
    Upstream u("leave_one_out_mean", up);
    Tensor& gb = gg.grad_buffer(ix);
    std::vector<double> usum(slab, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* src = u.get().data() + ch * slab;
      for (std::size_t i = 0; i < slab; ++i) usum[i] += src[i];
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* src = u.get().data() + ch * slab;
      double* dst = gb.data() + ch * slab;
      for (std::size_t i = 0; i < slab; ++i) dst[i] += (usum[i] - src[i]) * inv;
    }
  });
}

Value glu(Value x, std::size_t axis) {
  const Tensor& xv = x.val();
  if (axis >= xv.rank() || xv.shape()[axis] % 2 != 0) {
    throw DimensionError("glu: axis " + std::to_string(axis) + " of shape " +
                         shape_str(xv.shape()) + " not splittable in halves");
  }
  const std::size_t half = xv.shape()[axis] / 2;
  Value a = slice(x, axis, 0, half);
  Value b = slice(x, axis, half, half);
  return mul(a, sigmoid(b));
}

}  // namespace mfcca

// tests/oracles.cpp

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

#include "oracles.hpp"

#include <algorithm>
#include <cmath>

namespace mfcca::oracle {

Tensor matmul_naive(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c(i, j) += a(i, p) * b(p, j);
  return c;
}

Tensor conv2d_naive(const Tensor& x, const Tensor& kernels, const Tensor& bias) {
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t cout = kernels.dim(0), kh = kernels.dim(2), kw = kernels.dim(3);
  const std::ptrdiff_t ph = static_cast<std::ptrdiff_t>(kh / 2);
  const std::ptrdiff_t pw = static_cast<std::ptrdiff_t>(kw / 2);
  Tensor y({cout, h, w});
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        double acc = bias[o];
        for (std::size_t c = 0; c < cin; ++c)
          for (std::size_t u = 0; u < kh; ++u)
            for (std::size_t v = 0; v < kw; ++v) {
              const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i) + static_cast<std::ptrdiff_t>(u) - ph;
              const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(j) + static_cast<std::ptrdiff_t>(v) - pw;
              if (ii < 0 || jj < 0 || ii >= static_cast<std::ptrdiff_t>(h) ||
                  jj >= static_cast<std::ptrdiff_t>(w))
                continue;
              acc += x(c, static_cast<std::size_t>(ii), static_cast<std::size_t>(jj)) *
                     kernels(o, c, u, v);
            }
        y(o, i, j) = acc;
      }
  return y;
}

std::vector<double> softmax_row(const std::vector<double>& row) {
  double mx = row[0];
  for (double v : row) mx = std::max(mx, v);
  std::vector<double> out(row.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < row.size(); ++i) {
    out[i] = std::exp(row[i] - mx);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

AttentionWeights AttentionWeights::from_store(const ParamStore& store, const std::string& prefix,
                                              std::size_t heads, std::size_t dim) {
  AttentionWeights w;
  w.heads = heads;
  w.dim = dim;
  w.head_dim = dim / heads;
  const Tensor& wq = store.at(prefix + ".wq");
  const Tensor& wk = store.at(prefix + ".wk");
  const Tensor& wv = store.at(prefix + ".wv");
  const Tensor& bq = store.at(prefix + ".bq");
  const Tensor& bk = store.at(prefix + ".bk");
  const Tensor& bv = store.at(prefix + ".bv");
  for (std::size_t i = 0; i < heads; ++i) {
    Tensor mq({dim, w.head_dim}), mk({dim, w.head_dim}), mv({dim, w.head_dim});
    Tensor vq({w.head_dim}), vk({w.head_dim}), vvv({w.head_dim});
    for (std::size_t r = 0; r < dim; ++r)
      for (std::size_t c = 0; c < w.head_dim; ++c) {
        mq(r, c) = wq(i, r, c);
        mk(r, c) = wk(i, r, c);
        mv(r, c) = wv(i, r, c);
      }
    for (std::size_t c = 0; c < w.head_dim; ++c) {
      vq[c] = bq(i, c);
      vk[c] = bk(i, c);
      vvv[c] = bv(i, c);
    }
    w.wq.push_back(mq);
    w.wk.push_back(mk);
    w.wv.push_back(mv);
    w.bq.push_back(vq);
    w.bk.push_back(vk);
    w.bv.push_back(vvv);
  }
  w.wo = store.at(prefix + ".wo");
  w.bo = store.at(prefix + ".bo");
  return w;
}

namespace {

// rows of x projected: y[t,:] = x[t,:] W + b
Tensor project_rows(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t t = x.dim(0), d = x.dim(1), n = w.dim(1);
  Tensor y({t, n});
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = b[j];
      for (std::size_t p = 0; p < d; ++p) acc += x(i, p) * w(p, j);
      y(i, j) = acc;
    }
  return y;
}

// softmax(q k^T / sqrt(dh)) v for 2-D q [Nq,dh], k/v [Nk,dh]
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  const std::size_t nq = q.dim(0), nk = k.dim(0), dh = q.dim(1);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor out({nq, v.dim(1)});
  for (std::size_t i = 0; i < nq; ++i) {
    std::vector<double> row(nk);
    for (std::size_t j = 0; j < nk; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < dh; ++p) acc += q(i, p) * k(j, p);
      row[j] = acc * scale;
    }
    std::vector<double> p = softmax_row(row);
    for (std::size_t j = 0; j < nk; ++j)
      for (std::size_t c = 0; c < v.dim(1); ++c) out(i, c) += p[j] * v(j, c);
  }
  return out;
}

// full multi-head block on explicit 2-D query/key sources
Tensor multi_head_block(const Tensor& q_src, const Tensor& k_src, const AttentionWeights& w) {
  const std::size_t nq = q_src.dim(0);
  Tensor hcat({nq, w.dim});
  for (std::size_t i = 0; i < w.heads; ++i) {
    Tensor q = project_rows(q_src, w.wq[i], w.bq[i]);
    Tensor k = project_rows(k_src, w.wk[i], w.bk[i]);
    Tensor v = project_rows(k_src, w.wv[i], w.bv[i]);
    Tensor h = scaled_dot_attention(q, k, v);
    for (std::size_t t = 0; t < nq; ++t)
      for (std::size_t c = 0; c < w.head_dim; ++c) hcat(t, i * w.head_dim + c) = h(t, c);
  }
  return project_rows(hcat, w.wo, w.bo);
}

Tensor channel_slice(const Tensor& x, std::size_t c) {
  const std::size_t t = x.dim(1), d = x.dim(2);
  Tensor y({t, d});
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < d; ++j) y(i, j) = x(c, i, j);
  return y;
}

Tensor time_slice(const Tensor& x, std::size_t t) {
  const std::size_t ch = x.dim(0), d = x.dim(2);
  Tensor y({ch, d});
  for (std::size_t c = 0; c < ch; ++c)
    for (std::size_t j = 0; j < d; ++j) y(c, j) = x(c, t, j);
  return y;
}

}  // namespace

Tensor single_channel_oracle(const Tensor& x, const AttentionWeights& w) {
  return multi_head_block(x, x, w);
}

Tensor flcca_oracle(const Tensor& x, const AttentionWeights& w) {
  const std::size_t ch = x.dim(0), t = x.dim(1), d = x.dim(2);
  Tensor out({ch, t, d});
  for (std::size_t c = 0; c < ch; ++c) {
    // mean of all channels except c
    Tensor rest({t, d});
    for (std::size_t n = 0; n < ch; ++n) {
      if (n == c) continue;
      for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < d; ++j) rest(i, j) += x(n, i, j);
    }
    for (double& v : rest.vec()) v /= static_cast<double>(ch - 1);
    Tensor y = multi_head_block(channel_slice(x, c), rest, w);
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < d; ++j) out(c, i, j) = y(i, j);
  }
  return out;
}

Tensor clcca_oracle(const Tensor& x, const AttentionWeights& w) {
  const std::size_t ch = x.dim(0), t = x.dim(1), d = x.dim(2);
  Tensor out({ch, t, d});
  for (std::size_t i = 0; i < t; ++i) {
    Tensor xt = time_slice(x, i);
    Tensor y = multi_head_block(xt, xt, w);
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t j = 0; j < d; ++j) out(c, i, j) = y(c, j);
  }
  return out;
}

Tensor stack_context_oracle(const Tensor& x, std::size_t radius) {
  const std::size_t ch = x.dim(0), t = x.dim(1), d = x.dim(2);
  const std::size_t width = (2 * radius + 1) * ch;
  Tensor rows({t, width, d});
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t o = 0; o < 2 * radius + 1; ++o) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(i + o) -
                                 static_cast<std::ptrdiff_t>(radius);
      for (std::size_t c = 0; c < ch; ++c) {
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(t)) continue;  // zero padding
        for (std::size_t j = 0; j < d; ++j)
          rows(i, o * ch + c, j) = x(c, static_cast<std::size_t>(src), j);
      }
    }
  }
  return rows;
}

Tensor mfcca_oracle(const Tensor& x, const AttentionWeights& w, std::size_t radius) {
  const std::size_t ch = x.dim(0), t = x.dim(1), d = x.dim(2);
  Tensor ctx = stack_context_oracle(x, radius);
  Tensor out({ch, t, d});
  for (std::size_t i = 0; i < t; ++i) {
    Tensor keys({ctx.dim(1), d});
    for (std::size_t r = 0; r < ctx.dim(1); ++r)
      for (std::size_t j = 0; j < d; ++j) keys(r, j) = ctx(i, r, j);
    Tensor y = multi_head_block(time_slice(x, i), keys, w);
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t j = 0; j < d; ++j) out(c, i, j) = y(c, j);
  }
  return out;
}

namespace {

// Depth-first enumeration of alignment prefixes under a cost budget.
bool alignment_feasible(const std::vector<int>& a, const std::vector<int>& b, std::size_t i,
                        std::size_t j, std::size_t budget) {
  if (i == a.size()) return b.size() - j <= budget;   // insert the rest
  if (j == b.size()) return a.size() - i <= budget;   // delete the rest
  if (a[i] == b[j] && alignment_feasible(a, b, i + 1, j + 1, budget)) return true;
  if (budget == 0) return false;
  if (a[i] != b[j] && alignment_feasible(a, b, i + 1, j + 1, budget - 1)) return true;  // sub
  if (alignment_feasible(a, b, i + 1, j, budget - 1)) return true;                      // del
  return alignment_feasible(a, b, i, j + 1, budget - 1);                                // ins
}

}  // namespace

std::size_t edit_distance_bruteforce(const std::vector<int>& ref, const std::vector<int>& hyp) {
  for (std::size_t budget = 0;; ++budget) {
    if (alignment_feasible(ref, hyp, 0, 0, budget)) return budget;
  }
}

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.vec()) v = rng.uniform(-1.0, 1.0);
  return t;
}

}  // namespace mfcca::oracle

// mfcca/tensor.cpp

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

#include "mfcca/tensor.hpp"

#include <cmath>
#include <cstdlib>
#include <sstream>

namespace mfcca {

Tensor::Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
  data_.assign(shape_product(shape_), 0.0);
  init_strides();
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_product(shape_) != data_.size()) {
    throw DimensionError("tensor: shape " + shape_str(shape_) + " does not match data length " +
                         std::to_string(data_.size()));
  }
  init_strides();
}

Tensor Tensor::scalar(double v) {
  Tensor t;
  t.data_.assign(1, v);
  return t;
}

Tensor Tensor::filled(std::vector<std::size_t> shape, double v) {
  Tensor t(std::move(shape));
  t.data_.assign(t.size(), v);
  return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("tensor: axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(shape_));
  }
  return shape_[axis];
}

void Tensor::init_strides() {
  strides_.assign(shape_.empty() ? 0 : shape_.size() - 1, 1);
  for (std::size_t i = strides_.size(); i-- > 0;) {
    std::size_t next = (i + 1 < strides_.size()) ? strides_[i + 1] : 1;
    strides_[i] = next * shape_[i + 1];
  }
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

void check_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) {
    throw NumericError(std::string(op) + ": non-finite value in result of shape " +
                       shape_str(t.shape()));
  }
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw DimensionError("max_abs_diff: shapes " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a[i] - b[i]));
  }
  return m;
}

}  // namespace mfcca

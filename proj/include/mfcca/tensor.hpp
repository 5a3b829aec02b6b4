// mfcca/tensor.hpp

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
#include <initializer_list>
#include <string>
#include <vector>

#include "mfcca/error.hpp"

namespace mfcca {

// Dense rank-N array of doubles in row-major order. Rank 0 is a scalar
// (one element). Values are plain data: tensors are value types, copies
// are deep, and nothing here is reference counted.
class Tensor {
 public:
  Tensor() = default;

  // Zero-filled tensor of the given shape.
  explicit Tensor(std::vector<std::size_t> shape);

  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
  static Tensor filled(std::vector<std::size_t> shape, double v);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t axis) const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::size_t flat) { return data_[flat]; }
  double operator[](std::size_t flat) const { return data_[flat]; }

  double& operator()(std::size_t i) { return data_[i]; }
  double operator()(std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * strides_[0] + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * strides_[0] + j]; }
  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[i * strides_[0] + j * strides_[1] + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[i * strides_[0] + j * strides_[1] + k];
  }
  double& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    return data_[i * strides_[0] + j * strides_[1] + k * strides_[2] + l];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    return data_[i * strides_[0] + j * strides_[1] + k * strides_[2] + l];
  }

  // Row-major strides; strides_[axis] is the flat step of axis. The last
  // entry is always 1 and is kept implicit: strides_ has rank-1 entries.
  const std::vector<std::size_t>& inner_strides() const { return strides_; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool empty() const { return data_.empty(); }

  // True when every element is finite.
  bool all_finite() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<std::size_t> strides_;  // rank-1 entries, last axis stride (1) implicit
  std::vector<double> data_;

  void init_strides();
};

// "[2, 3, 4]" for error messages.
std::string shape_str(const std::vector<std::size_t>& shape);

std::size_t shape_product(const std::vector<std::size_t>& shape);

// Throws NumericError naming `op` when t holds a NaN or Inf.
void check_finite(const Tensor& t, const char* op);

// Max over coordinates of |a - b|; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace mfcca

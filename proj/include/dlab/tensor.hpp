// Copyright 2026 The dlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dlab/error.hpp"

namespace dlab {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape) noexcept;
std::string shape_string(const Shape& shape);

// Dense row-major array. S is double for ordinary evaluation and Dual when a
// tangent is being pushed through a computation.
template <class S>
class BasicTensor {
 public:
  using value_type = S;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, S fill = S{})
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
    check_extents();
  }

  BasicTensor(Shape shape, std::vector<S> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents();
    require(data_.size() == shape_size(shape_), ErrorCode::kShape,
            "tensor data length " + std::to_string(data_.size()) +
                " does not match shape " + shape_string(shape_));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const {
    require(axis < shape_.size(), ErrorCode::kShape, "axis out of range");
    return shape_[axis];
  }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<S> data() noexcept { return data_; }
  std::span<const S> data() const noexcept { return data_; }
  S* ptr() noexcept { return data_.data(); }
  const S* ptr() const noexcept { return data_.data(); }

  S& operator[](std::size_t i) noexcept { return data_[i]; }
  const S& operator[](std::size_t i) const noexcept { return data_[i]; }

  BasicTensor reshaped(Shape shape) const {
    require(shape_size(shape) == data_.size(), ErrorCode::kShape,
            "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    return BasicTensor(std::move(shape), data_);
  }

  bool operator==(const BasicTensor&) const = default;

 private:
  void check_extents() const {
    for (std::size_t e : shape_)
      require(e > 0, ErrorCode::kShape, "tensor extents must be positive, got " + shape_string(shape_));
  }

  Shape shape_;
  std::vector<S> data_;
};

using Tensor = BasicTensor<double>;

// Construction from data that crossed a trust boundary (files, C callers).
// Rejects NaN and infinities.
Tensor tensor_from_external(Shape shape, std::vector<double> data);

}  // namespace dlab

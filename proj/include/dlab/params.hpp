// Copyright 2026 The dlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dlab/tape.hpp"
#include "dlab/tensor.hpp"

namespace dlab {

struct ParamEntry {
  std::string name;
  Shape shape;
  std::size_t offset = 0;
  std::size_t size = 0;

  bool operator==(const ParamEntry&) const = default;
};

// Named, contiguous, non-overlapping slots of a flat parameter vector.
class ParamLayout {
 public:
  void add(std::string name, Shape shape);

  const std::vector<ParamEntry>& entries() const noexcept { return entries_; }
  std::size_t total() const noexcept { return total_; }
  std::size_t count() const noexcept { return entries_.size(); }

  bool operator==(const ParamLayout&) const = default;

 private:
  std::vector<ParamEntry> entries_;
  std::size_t total_ = 0;
};

// Flat values plus the layout that names them. Used for network weights,
// gradients, and directions in parameter space alike.
class ParamVector {
 public:
  ParamVector() : layout_(std::make_shared<const ParamLayout>()) {}
  explicit ParamVector(std::shared_ptr<const ParamLayout> layout);
  ParamVector(std::shared_ptr<const ParamLayout> layout, std::vector<double> values);

  static ParamVector zeros_like(const ParamVector& other) { return ParamVector(other.layout_); }
  static ParamVector flatten(std::shared_ptr<const ParamLayout> layout, const std::vector<Tensor>& parts);

  const ParamLayout& layout() const noexcept { return *layout_; }
  const std::shared_ptr<const ParamLayout>& layout_ptr() const noexcept { return layout_; }
  bool same_layout(const ParamVector& other) const;

  std::size_t size() const noexcept { return values_.size(); }
  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  double& operator[](std::size_t i) noexcept { return values_[i]; }
  double operator[](std::size_t i) const noexcept { return values_[i]; }

  std::span<double> slot(std::size_t entry);
  std::span<const double> slot(std::size_t entry) const;
  Tensor tensor(std::size_t entry) const;
  std::vector<Tensor> unflatten() const;

  // this += factor * other
  ParamVector& axpy(double factor, const ParamVector& other);
  ParamVector& operator+=(const ParamVector& other) { return axpy(1.0, other); }
  ParamVector& operator-=(const ParamVector& other) { return axpy(-1.0, other); }
  ParamVector& operator*=(double factor);

  double dot(const ParamVector& other) const;
  double norm() const;
  double max_abs() const;
  bool all_finite() const;
  bool is_zero() const;

  bool operator==(const ParamVector& other) const;

 private:
  std::shared_ptr<const ParamLayout> layout_;
  std::vector<double> values_;
};

ParamVector operator+(ParamVector a, const ParamVector& b);
ParamVector operator-(ParamVector a, const ParamVector& b);
ParamVector operator*(double factor, ParamVector a);

double cosine_similarity(const ParamVector& a, const ParamVector& b);
double relative_error(const ParamVector& got, const ParamVector& want);

// Places every slot of `params` on the tape as one leaf per entry.
template <class S>
std::vector<Var> bind(Tape<S>& tape, const ParamVector& params, bool requires_grad);

// Leaves carrying `direction` as their tangent.
std::vector<Var> bind_dual(Tape<Dual>& tape, const ParamVector& params, const ParamVector& direction,
                           bool requires_grad);

ParamVector collect(const Gradients<double>& grads, std::span<const Var> vars,
                    const std::shared_ptr<const ParamLayout>& layout);

struct DualCollected {
  ParamVector value;
  ParamVector tangent;
};

DualCollected collect_dual(const Gradients<Dual>& grads, std::span<const Var> vars,
                           const std::shared_ptr<const ParamLayout>& layout);

}  // namespace dlab

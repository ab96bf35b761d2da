// Copyright 2026 The dlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "dlab/params.hpp"

#include <algorithm>
#include <cmath>

namespace dlab {

void ParamLayout::add(std::string name, Shape shape) {
  const std::size_t n = shape_size(shape);
  require(!shape.empty() && n > 0, ErrorCode::kShape, "parameter '" + name + "' has an empty shape");
  entries_.push_back(ParamEntry{std::move(name), std::move(shape), total_, n});
  total_ += n;
}

ParamVector::ParamVector(std::shared_ptr<const ParamLayout> layout)
    : layout_(std::move(layout)), values_(layout_->total(), 0.0) {}

ParamVector::ParamVector(std::shared_ptr<const ParamLayout> layout, std::vector<double> values)
    : layout_(std::move(layout)), values_(std::move(values)) {
  require(values_.size() == layout_->total(), ErrorCode::kShape,
          "parameter vector has " + std::to_string(values_.size()) + " values, layout needs " +
              std::to_string(layout_->total()));
}

ParamVector ParamVector::flatten(std::shared_ptr<const ParamLayout> layout,
                                 const std::vector<Tensor>& parts) {
  require(parts.size() == layout->count(), ErrorCode::kShape, "flatten: wrong number of tensors");
  ParamVector out(std::move(layout));
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const ParamEntry& e = out.layout().entries()[i];
    require(parts[i].shape() == e.shape, ErrorCode::kShape,
            "flatten: '" + e.name + "' expects " + shape_string(e.shape) + ", got " +
                shape_string(parts[i].shape()));
    std::copy(parts[i].data().begin(), parts[i].data().end(), out.values_.begin() + static_cast<std::ptrdiff_t>(e.offset));
  }
  return out;
}

bool ParamVector::same_layout(const ParamVector& other) const {
  return layout_ == other.layout_ || *layout_ == *other.layout_;
}

std::span<double> ParamVector::slot(std::size_t entry) {
  const ParamEntry& e = layout_->entries().at(entry);
  return std::span<double>(values_).subspan(e.offset, e.size);
}

std::span<const double> ParamVector::slot(std::size_t entry) const {
  const ParamEntry& e = layout_->entries().at(entry);
  return std::span<const double>(values_).subspan(e.offset, e.size);
}

Tensor ParamVector::tensor(std::size_t entry) const {
  auto s = slot(entry);
  return Tensor(layout_->entries()[entry].shape, std::vector<double>(s.begin(), s.end()));
}

std::vector<Tensor> ParamVector::unflatten() const {
  std::vector<Tensor> out;
  out.reserve(layout_->count());
  for (std::size_t i = 0; i < layout_->count(); ++i) out.push_back(tensor(i));
  return out;
}

ParamVector& ParamVector::axpy(double factor, const ParamVector& other) {
  require(same_layout(other), ErrorCode::kShape, "parameter vectors have different layouts");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += factor * other.values_[i];
  return *this;
}

ParamVector& ParamVector::operator*=(double factor) {
  for (double& v : values_) v *= factor;
  return *this;
}

double ParamVector::dot(const ParamVector& other) const {
  require(same_layout(other), ErrorCode::kShape, "parameter vectors have different layouts");
  double acc = 0.0;
  for (std::size_t i = 0; i < values_.size(); ++i) acc += values_[i] * other.values_[i];
  return acc;
}

double ParamVector::norm() const { return std::sqrt(dot(*this)); }

double ParamVector::max_abs() const {
  double m = 0.0;
  for (double v : values_) m = std::max(m, std::abs(v));
  return m;
}

bool ParamVector::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

bool ParamVector::is_zero() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return v == 0.0; });
}

bool ParamVector::operator==(const ParamVector& other) const {
  return same_layout(other) && values_ == other.values_;
}

ParamVector operator+(ParamVector a, const ParamVector& b) { return a += b; }
ParamVector operator-(ParamVector a, const ParamVector& b) { return a -= b; }
ParamVector operator*(double factor, ParamVector a) { return a *= factor; }

double cosine_similarity(const ParamVector& a, const ParamVector& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

double relative_error(const ParamVector& got, const ParamVector& want) {
  const double scale = std::max(want.norm(), 1e-12);
  return (got - want).norm() / scale;
}

template <class S>
std::vector<Var> bind(Tape<S>& tape, const ParamVector& params, bool requires_grad) {
  std::vector<Var> vars;
  vars.reserve(params.layout().count());
  for (std::size_t i = 0; i < params.layout().count(); ++i) {
    const ParamEntry& e = params.layout().entries()[i];
    auto s = params.slot(i);
    std::vector<S> data(s.begin(), s.end());
    vars.push_back(tape.input(BasicTensor<S>(e.shape, std::move(data)), requires_grad));
  }
  return vars;
}

template std::vector<Var> bind(Tape<double>&, const ParamVector&, bool);
template std::vector<Var> bind(Tape<Dual>&, const ParamVector&, bool);

std::vector<Var> bind_dual(Tape<Dual>& tape, const ParamVector& params, const ParamVector& direction,
                           bool requires_grad) {
  require(params.same_layout(direction), ErrorCode::kShape, "bind_dual: direction layout differs");
  std::vector<Var> vars;
  vars.reserve(params.layout().count());
  for (std::size_t i = 0; i < params.layout().count(); ++i) {
    const ParamEntry& e = params.layout().entries()[i];
    auto v = params.slot(i);
    auto d = direction.slot(i);
    std::vector<Dual> data(v.size());
    for (std::size_t k = 0; k < v.size(); ++k) data[k] = Dual(v[k], d[k]);
    vars.push_back(tape.input(BasicTensor<Dual>(e.shape, std::move(data)), requires_grad));
  }
  return vars;
}

ParamVector collect(const Gradients<double>& grads, std::span<const Var> vars,
                    const std::shared_ptr<const ParamLayout>& layout) {
  ParamVector out(layout);
  require(vars.size() == layout->count(), ErrorCode::kShape, "collect: variable count mismatch");
  for (std::size_t i = 0; i < vars.size(); ++i) {
    const Tensor& g = grads[vars[i]];
    std::copy(g.data().begin(), g.data().end(), out.slot(i).begin());
  }
  return out;
}

DualCollected collect_dual(const Gradients<Dual>& grads, std::span<const Var> vars,
                           const std::shared_ptr<const ParamLayout>& layout) {
  DualCollected out{ParamVector(layout), ParamVector(layout)};
  require(vars.size() == layout->count(), ErrorCode::kShape, "collect_dual: variable count mismatch");
  for (std::size_t i = 0; i < vars.size(); ++i) {
    const BasicTensor<Dual>& g = grads[vars[i]];
    auto v = out.value.slot(i);
    auto t = out.tangent.slot(i);
    for (std::size_t k = 0; k < g.size(); ++k) {
      v[k] = g[k].v;
      t[k] = g[k].d;
    }
  }
  return out;
}

}  // namespace dlab

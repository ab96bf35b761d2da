// Copyright 2026 The dlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "dlab/dual.hpp"
#include "dlab/tensor.hpp"

namespace dlab {

// Handle to a value recorded on a specific tape.
struct Var {
  std::uint32_t tape = 0;
  std::uint32_t index = 0;
};

enum class Op : std::uint8_t {
  kInput,
  kAdd,
  kAddBias,
  kSub,
  kScale,
  kMul,
  kMatmul,
  kConv2d,
  kRelu,
  kSigmoid,
  kLogSoftmax,
  kCrossEntropy,
  kKlLogits,
  kMse,
  kL1,
  kClip,
  kReshape,
  kMean,
  kSum,
  kSliceRows,
  kConcatRows,
  kTranspose,
  kRowNormalize,
  kGather,
  kTileBatch,
};

std::string_view op_name(Op op) noexcept;

template <class S>
class Gradients;

// Records a computation over BasicTensor<S> for reverse-mode differentiation.
//
// Records are appended in evaluation order, so every record's inputs precede
// it. A tape is owned by one thread; it is not safe to record from two.
template <class S>
class Tape {
 public:
  using TensorT = BasicTensor<S>;

  struct Record {
    Op op = Op::kInput;
    std::vector<std::uint32_t> inputs;
    TensorT value;
    bool requires_grad = false;
    double scalar_a = 0.0;  // scale factor, clip low, temperature
    double scalar_b = 0.0;  // clip high
    std::vector<std::size_t> ints;  // labels, slice bounds, tile count
    Shape shape;                    // reshape target
  };

  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;

  std::uint32_t id() const noexcept { return id_; }
  std::size_t size() const noexcept { return records_.size(); }
  const Record& record(std::size_t i) const { return records_.at(i); }

  // Leaves.
  Var input(TensorT value, bool requires_grad = false);
  Var constant(const Tensor& value);

  // Elementwise, identical shapes.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double factor);
  Var relu(Var a);
  Var sigmoid(Var a);
  Var clip(Var a, double lo, double hi);

  // x: [n, m], bias: [m].
  Var add_bias(Var x, Var bias);
  // [n, k] x [k, m].
  Var matmul(Var a, Var b);
  // x: [n, c, h, w], weight: [o, c, k, k], bias: [o]; stride 1, no padding.
  Var conv2d(Var x, Var weight, Var bias);
  // Row-wise over the last axis of a [n, c] tensor.
  Var log_softmax(Var logits);
  // Mean over rows of -log softmax(logits)[label].
  Var cross_entropy(Var logits, std::span<const std::size_t> labels);
  // Mean over rows of tau^2 * KL(softmax(teacher/tau) || softmax(student/tau)).
  Var kl_logits(Var student, Var teacher, double tau);
  // Mean of squared differences over all elements.
  Var mse(Var a, Var b);
  // Sum of absolute values.
  Var l1(Var a);
  Var reshape(Var a, Shape shape);
  Var mean(Var a);
  Var sum(Var a);
  // Rows [begin, end) along axis 0.
  Var slice_rows(Var a, std::size_t begin, std::size_t end);
  Var concat_rows(std::span<const Var> parts);
  // [n, m] -> [m, n].
  Var transpose(Var a);
  // Each row of a [n, m] tensor divided by its L2 norm; zero rows stay zero.
  Var row_normalize(Var a);
  // out[i] = x[i, index[i]] for x: [n, c].
  Var gather(Var x, std::span<const std::size_t> index);
  // [1, ...] -> [count, ...].
  Var tile_batch(Var a, std::size_t count);

  const TensorT& value(Var v) const;
  bool requires_grad(Var v) const;

  // Reverse sweep seeded with `seed` (same shape as `output`).
  Gradients<S> backward(Var output, const TensorT& seed) const;
  // Scalar outputs only; seed 1.
  Gradients<S> backward(Var output) const;

  // Re-evaluates every non-leaf record from the recorded leaves.
  std::vector<TensorT> replay() const;

 private:
  Var push(Record record);
  const Record& at(Var v) const;

  std::uint32_t id_;
  std::vector<Record> records_;
};

template <class S>
class Gradients {
 public:
  Gradients(std::uint32_t tape, std::vector<BasicTensor<S>> grads, std::vector<bool> tracked)
      : tape_(tape), grads_(std::move(grads)), tracked_(std::move(tracked)) {}

  // Gradient with respect to a tracked value. Tracked values the output does
  // not depend on get zeros.
  const BasicTensor<S>& operator[](Var v) const {
    require(v.tape == tape_, ErrorCode::kInvalidArgument,
            "gradient requested for a value from a different tape");
    require(v.index < grads_.size() && tracked_[v.index], ErrorCode::kInvalidArgument,
            "gradient requested for a value that does not require grad");
    return grads_[v.index];
  }

 private:
  std::uint32_t tape_;
  std::vector<BasicTensor<S>> grads_;
  std::vector<bool> tracked_;
};

extern template class Tape<double>;
extern template class Tape<Dual>;

// Pairs every value of `value` with the matching entry of `direction`.
BasicTensor<Dual> make_dual(const Tensor& value, const Tensor& direction);
Tensor primal_part(const BasicTensor<Dual>& t);
Tensor tangent_part(const BasicTensor<Dual>& t);

}  // namespace dlab

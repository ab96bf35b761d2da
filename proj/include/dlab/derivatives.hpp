// Copyright 2026 The dlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "dlab/params.hpp"
#include "dlab/tape.hpp"

namespace dlab {

enum class HvpBackend {
  kFiniteDiff,  // central difference of two gradients; first-order tapes only
  kExact,       // forward-over-reverse on a Dual tape
};

// Scalar function of one parameter vector, recordable on either tape kind.
class Objective {
 public:
  virtual ~Objective() = default;
  virtual Var build(Tape<double>& tape, std::span<const Var> params) const = 0;
  virtual Var build(Tape<Dual>& tape, std::span<const Var> params) const = 0;
};

// Adapts a generic callable `f(auto& tape, std::span<const Var>) -> Var`.
template <class F>
class FunctionObjective final : public Objective {
 public:
  explicit FunctionObjective(F f) : f_(std::move(f)) {}
  Var build(Tape<double>& tape, std::span<const Var> params) const override { return f_(tape, params); }
  Var build(Tape<Dual>& tape, std::span<const Var> params) const override { return f_(tape, params); }

 private:
  F f_;
};

template <class F>
FunctionObjective<F> make_objective(F f) {
  return FunctionObjective<F>(std::move(f));
}

double value_and_gradient(const Objective& objective, const ParamVector& at, ParamVector* grad);
ParamVector gradient(const Objective& objective, const ParamVector& at);

// Step used by the finite-difference HVP: r / (|v| + tiny), r = 1e-4 (1 + |at|).
double hvp_step(const ParamVector& at, const ParamVector& direction);

// (d^2 L / d theta^2) * direction. A zero direction returns zeros without
// evaluating anything.
ParamVector hvp(const Objective& objective, const ParamVector& at, const ParamVector& direction,
                HvpBackend backend = HvpBackend::kFiniteDiff);

// Central differences with per-coordinate step 1e-5 (1 + |theta_i|).
ParamVector finite_diff_grad(const std::function<double(const ParamVector&)>& loss, const ParamVector& at);
ParamVector finite_diff_grad(const Objective& objective, const ParamVector& at);

double objective_value(const Objective& objective, const ParamVector& at);

struct Evaluation {
  Tape<double> tape;
  std::vector<Var> inputs;
  std::vector<Var> outputs;

  std::vector<Tensor> values() const {
    std::vector<Tensor> out;
    for (Var v : outputs) out.push_back(tape.value(v));
    return out;
  }
};

// Records `builder(tape, inputs) -> std::vector<Var>` with every input
// tracked for gradients.
template <class F>
Evaluation evaluate(F&& builder, const std::vector<Tensor>& inputs) {
  Evaluation e;
  for (const Tensor& t : inputs) {
    for (double x : t.data())
      require(std::isfinite(x), ErrorCode::kValidation, "evaluate: non-finite input");
    e.inputs.push_back(e.tape.input(t, true));
  }
  e.outputs = std::forward<F>(builder)(e.tape, std::span<const Var>(e.inputs));
  return e;
}

}  // namespace dlab

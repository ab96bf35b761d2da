// Copyright 2026 The dlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "dlab/derivatives.hpp"

#include <cmath>

namespace dlab {

double objective_value(const Objective& objective, const ParamVector& at) {
  Tape<double> tape;
  auto vars = bind(tape, at, false);
  return tape.value(objective.build(tape, vars))[0];
}

double value_and_gradient(const Objective& objective, const ParamVector& at, ParamVector* grad) {
  Tape<double> tape;
  auto vars = bind(tape, at, true);
  const Var loss = objective.build(tape, vars);
  const double value = tape.value(loss)[0];
  if (grad) *grad = collect(tape.backward(loss), vars, at.layout_ptr());
  return value;
}

ParamVector gradient(const Objective& objective, const ParamVector& at) {
  ParamVector g;
  value_and_gradient(objective, at, &g);
  return g;
}

double hvp_step(const ParamVector& at, const ParamVector& direction) {
  const double r = 1e-4 * (1.0 + at.norm());
  return r / (direction.norm() + 1e-30);
}

ParamVector hvp(const Objective& objective, const ParamVector& at, const ParamVector& direction,
                HvpBackend backend) {
  require(at.same_layout(direction), ErrorCode::kShape, "hvp: direction layout differs from point");
  if (direction.is_zero()) return ParamVector::zeros_like(at);

  if (backend == HvpBackend::kExact) {
    Tape<Dual> tape;
    auto vars = bind_dual(tape, at, direction, true);
    const Var loss = objective.build(tape, vars);
    return collect_dual(tape.backward(loss), vars, at.layout_ptr()).tangent;
  }

  const double h = hvp_step(at, direction);
  ParamVector plus = at, minus = at;
  plus.axpy(h, direction);
  minus.axpy(-h, direction);
  ParamVector out = gradient(objective, plus);
  out -= gradient(objective, minus);
  out *= 1.0 / (2.0 * h);
  return out;
}

ParamVector finite_diff_grad(const std::function<double(const ParamVector&)>& loss, const ParamVector& at) {
  ParamVector out = ParamVector::zeros_like(at);
  ParamVector probe = at;
  for (std::size_t i = 0; i < at.size(); ++i) {
    const double h = 1e-5 * (1.0 + std::abs(at[i]));
    probe[i] = at[i] + h;
    const double up = loss(probe);
    probe[i] = at[i] - h;
    const double down = loss(probe);
    probe[i] = at[i];
    out[i] = (up - down) / (2.0 * h);
  }
  return out;
}

ParamVector finite_diff_grad(const Objective& objective, const ParamVector& at) {
  return finite_diff_grad([&](const ParamVector& p) { return objective_value(objective, p); }, at);
}

}  // namespace dlab

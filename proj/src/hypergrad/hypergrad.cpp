// Copyright 2026 The dlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "dlab/hypergrad.hpp"

#include <cmath>
#include <string>

namespace dlab {

void HypergradConfig::validate() const {
  require(T >= 1, ErrorCode::kInvalidArgument, "hypergrad: T must be at least 1");
  require(K >= 1, ErrorCode::kInvalidArgument, "hypergrad: K must be at least 1");
  require(inner_rate > 0.0 && std::isfinite(inner_rate), ErrorCode::kInvalidArgument,
          "hypergrad: inner rate must be positive");
  require(subset_batches >= 1, ErrorCode::kInvalidArgument, "hypergrad: M must be at least 1");
}

Batch concat_batches(std::span<const Batch> parts) {
  Batch out;
  for (const Batch& b : parts) out.insert(out.end(), b.begin(), b.end());
  return out;
}

namespace {

// L_in(., lambda) or L_out(., lambda) as an objective over omega.
auto omega_objective(const BilevelProblem& p, const ParamVector& lambda, const Batch& batch, bool outer) {
  return make_objective([&p, &lambda, &batch, outer](auto& tape, std::span<const Var> omega) {
    auto lam = bind(tape, lambda, false);
    return outer ? p.outer_loss(tape, omega, lam, batch) : p.inner_loss(tape, omega, lam, batch);
  });
}

void check_finite(double value, const char* what) {
  if (!std::isfinite(value)) fail(ErrorCode::kDivergence, std::string(what) + " became non-finite");
}

}  // namespace

double inner_value(const BilevelProblem& p, const ParamVector& omega, const ParamVector& lambda, const Batch& batch) {
  Tape<double> tape;
  auto w = bind(tape, omega, false);
  auto l = bind(tape, lambda, false);
  return tape.value(p.inner_loss(tape, w, l, batch))[0];
}

double outer_value(const BilevelProblem& p, const ParamVector& omega, const ParamVector& lambda, const Batch& batch) {
  Tape<double> tape;
  auto w = bind(tape, omega, false);
  auto l = bind(tape, lambda, false);
  return tape.value(p.outer_loss(tape, w, l, batch))[0];
}

ParamVector inner_grad_omega(const BilevelProblem& p, const ParamVector& omega, const ParamVector& lambda,
                             const Batch& batch) {
  Tape<double> tape;
  auto w = bind(tape, omega, true);
  auto l = bind(tape, lambda, false);
  Var loss = p.inner_loss(tape, w, l, batch);
  check_finite(tape.value(loss)[0], "inner loss");
  return collect(tape.backward(loss), w, omega.layout_ptr());
}

ParamVector inner_grad_lambda(const BilevelProblem& p, const ParamVector& omega, const ParamVector& lambda,
                              const Batch& batch) {
  Tape<double> tape;
  auto w = bind(tape, omega, false);
  auto l = bind(tape, lambda, true);
  Var loss = p.inner_loss(tape, w, l, batch);
  check_finite(tape.value(loss)[0], "inner loss");
  return collect(tape.backward(loss), l, lambda.layout_ptr());
}

ParamVector inner_solve(const BilevelProblem& p, const ParamVector& lambda, ParamVector omega,
                        const HypergradConfig& cfg, const BatchStream& stream) {
  cfg.validate();
  require(!stream.empty(), ErrorCode::kInvalidArgument, "inner_solve: empty batch stream");
  for (std::size_t t = 0; t < cfg.T; ++t)
    omega.axpy(-cfg.inner_rate, inner_grad_omega(p, omega, lambda, stream[t % stream.size()]));
  return omega;
}

OuterPartials outer_partials(const BilevelProblem& p, const ParamVector& omega, const ParamVector& lambda,
                             const Batch& subset) {
  Tape<double> tape;
  auto w = bind(tape, omega, true);
  auto l = bind(tape, lambda, true);
  Var loss = p.outer_loss(tape, w, l, subset);
  const double value = tape.value(loss)[0];
  check_finite(value, "outer loss");
  auto grads = tape.backward(loss);
  return {collect(grads, w, omega.layout_ptr()), collect(grads, l, lambda.layout_ptr()), value};
}

ParamVector phi_jvp_omega(const BilevelProblem& p, const ParamVector& omega, const ParamVector& lambda,
                          const ParamVector& v, double eps, const Batch& subset, HvpBackend backend) {
  auto objective = omega_objective(p, lambda, subset, false);
  ParamVector out = v;
  out.axpy(-eps, hvp(objective, omega, v, backend));
  return out;
}

ParamVector phi_vjp_lambda(const BilevelProblem& p, const ParamVector& omega, const ParamVector& lambda,
                           const ParamVector& v, double eps, const Batch& subset, HvpBackend backend) {
  require(omega.same_layout(v), ErrorCode::kShape, "phi_vjp_lambda: v layout differs from omega");
  if (v.is_zero()) return ParamVector::zeros_like(lambda);
  ParamVector mixed;
  if (backend == HvpBackend::kExact) {
    Tape<Dual> tape;
    auto w = bind_dual(tape, omega, v, false);
    auto l = bind(tape, lambda, true);
    Var loss = p.inner_loss(tape, w, l, subset);
    mixed = collect_dual(tape.backward(loss), l, lambda.layout_ptr()).tangent;
  } else {
    const double h = hvp_step(omega, v);
    ParamVector plus = omega, minus = omega;
    plus.axpy(h, v);
    minus.axpy(-h, v);
    mixed = inner_grad_lambda(p, plus, lambda, subset);
    mixed -= inner_grad_lambda(p, minus, lambda, subset);
    mixed *= 1.0 / (2.0 * h);
  }
  mixed *= -eps;
  return mixed;
}

ParamVector neumann_v(const BilevelProblem& p, const ParamVector& omega, const ParamVector& lambda,
                      const ParamVector& g_omega, std::size_t K, double eps, const Batch& subset,
                      HvpBackend backend) {
  require(K >= 1, ErrorCode::kInvalidArgument, "neumann_v: K must be at least 1");
  require(omega.same_layout(g_omega), ErrorCode::kShape, "neumann_v: g_omega layout differs from omega");
  ParamVector v = ParamVector::zeros_like(omega);
  if (g_omega.is_zero()) return v;
  const double limit = 1e8 * g_omega.norm();
  for (std::size_t n = 0; n < K; ++n) {
    v = phi_jvp_omega(p, omega, lambda, v, eps, subset, backend);
    v += g_omega;
    const double norm = v.norm();
    if (!std::isfinite(norm) || norm > limit)
      fail(ErrorCode::kDivergence, "Neumann iteration diverged at step " + std::to_string(n + 1) + " (|v| = " +
                                       std::to_string(norm) + "); the spectral radius of I - eps*H exceeds 1, "
                                       "lower the inner rate");
  }
  return v;
}

HypergradResult hypergradient(const BilevelProblem& p, const ParamVector& lambda, const HypergradConfig& cfg,
                              const BatchStream& stream, const Batch& subset, std::uint64_t seed) {
  cfg.validate();
  HypergradResult r;
  r.omega = inner_solve(p, lambda, p.initial_inner(seed), cfg, stream);
  r.partials = outer_partials(p, r.omega, lambda, subset);
  r.v = neumann_v(p, r.omega, lambda, r.partials.g_omega, cfg.K, cfg.inner_rate, subset, cfg.backend);
  r.grad = r.partials.g_lambda;
  r.grad += phi_vjp_lambda(p, r.omega, lambda, r.v, cfg.inner_rate, subset, cfg.backend);
  return r;
}

ParamVector unrolled_oracle(const BilevelProblem& p, const ParamVector& lambda, const HypergradConfig& cfg,
                            const BatchStream& stream, const Batch& subset, std::uint64_t seed) {
  cfg.validate();
  require(!stream.empty(), ErrorCode::kInvalidArgument, "unrolled_oracle: empty batch stream");
  std::vector<ParamVector> trajectory{p.initial_inner(seed)};
  constexpr std::size_t kMaxStored = std::size_t{1} << 27;
  require(cfg.T * trajectory[0].size() <= kMaxStored, ErrorCode::kInvalidArgument,
          "unrolled_oracle: T too large to store the inner trajectory");
  for (std::size_t t = 0; t < cfg.T; ++t) {
    ParamVector next = trajectory.back();
    next.axpy(-cfg.inner_rate, inner_grad_omega(p, trajectory.back(), lambda, stream[t % stream.size()]));
    trajectory.push_back(std::move(next));
  }

  OuterPartials op = outer_partials(p, trajectory.back(), lambda, subset);
  ParamVector adj = std::move(op.g_omega);
  ParamVector grad = std::move(op.g_lambda);
  for (std::size_t t = cfg.T; t-- > 0;) {
    if (adj.is_zero()) break;
    Tape<Dual> tape;
    auto w = bind_dual(tape, trajectory[t], adj, true);
    auto l = bind(tape, lambda, true);
    Var loss = p.inner_loss(tape, w, l, stream[t % stream.size()]);
    auto grads = tape.backward(loss);
    grad.axpy(-cfg.inner_rate, collect_dual(grads, l, lambda.layout_ptr()).tangent);
    adj.axpy(-cfg.inner_rate, collect_dual(grads, w, adj.layout_ptr()).tangent);
  }
  return grad;
}

}  // namespace dlab

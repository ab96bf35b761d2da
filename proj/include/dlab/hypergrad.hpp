// Copyright 2026 The dlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dlab/dataset.hpp"
#include "dlab/derivatives.hpp"
#include "dlab/params.hpp"
#include "dlab/tape.hpp"

namespace dlab {

// Inner objective L_in(omega, lambda) and outer objective L_out(omega, lambda)
// evaluated on a batch of sample indices. omega and lambda arrive as per-entry
// leaves; either may be untracked.
class BilevelProblem {
 public:
  virtual ~BilevelProblem() = default;

  virtual Var inner_loss(Tape<double>& tape, std::span<const Var> omega, std::span<const Var> lambda,
                         const Batch& batch) const = 0;
  virtual Var inner_loss(Tape<Dual>& tape, std::span<const Var> omega, std::span<const Var> lambda,
                         const Batch& batch) const = 0;
  virtual Var outer_loss(Tape<double>& tape, std::span<const Var> omega, std::span<const Var> lambda,
                         const Batch& batch) const = 0;
  virtual Var outer_loss(Tape<Dual>& tape, std::span<const Var> omega, std::span<const Var> lambda,
                         const Batch& batch) const = 0;

  // Fresh inner variables for one outer iteration.
  virtual ParamVector initial_inner(std::uint64_t seed) const = 0;
};

struct HypergradConfig {
  std::size_t T = 20;               // inner gradient steps
  std::size_t K = 100;              // fixed-point iterations
  double inner_rate = 0.1;          // epsilon
  std::size_t subset_batches = 40;  // M
  HvpBackend backend = HvpBackend::kFiniteDiff;

  void validate() const;
};

// Inner step t uses stream[t % stream.size()].
using BatchStream = std::vector<Batch>;

// Joins batches into one index list.
Batch concat_batches(std::span<const Batch> parts);

double inner_value(const BilevelProblem& p, const ParamVector& omega, const ParamVector& lambda, const Batch& batch);
double outer_value(const BilevelProblem& p, const ParamVector& omega, const ParamVector& lambda, const Batch& batch);
ParamVector inner_grad_omega(const BilevelProblem& p, const ParamVector& omega, const ParamVector& lambda,
                             const Batch& batch);
ParamVector inner_grad_lambda(const BilevelProblem& p, const ParamVector& omega, const ParamVector& lambda,
                              const Batch& batch);

// omega_{t+1} = omega_t - eps * grad_omega L_in(omega_t, lambda), T times.
ParamVector inner_solve(const BilevelProblem& p, const ParamVector& lambda, ParamVector omega,
                        const HypergradConfig& cfg, const BatchStream& stream);

struct OuterPartials {
  ParamVector g_omega;
  ParamVector g_lambda;
  double value = 0.0;
};

// Partial gradients of L_out at (omega, lambda), each treating the other
// argument as a constant.
OuterPartials outer_partials(const BilevelProblem& p, const ParamVector& omega, const ParamVector& lambda,
                             const Batch& subset);

// v - eps * H_omega_omega v.
ParamVector phi_jvp_omega(const BilevelProblem& p, const ParamVector& omega, const ParamVector& lambda,
                          const ParamVector& v, double eps, const Batch& subset,
                          HvpBackend backend = HvpBackend::kFiniteDiff);

// -eps * H_lambda_omega v. The finite-difference backend differences the
// lambda-gradient along v with the hvp step rule.
ParamVector phi_vjp_lambda(const BilevelProblem& p, const ParamVector& omega, const ParamVector& lambda,
                           const ParamVector& v, double eps, const Batch& subset,
                           HvpBackend backend = HvpBackend::kFiniteDiff);

// v_0 = 0, v_{n+1} = phi_jvp_omega(v_n) + g_omega, K times. Throws kDivergence
// once |v_n| exceeds 1e8 |g_omega|.
ParamVector neumann_v(const BilevelProblem& p, const ParamVector& omega, const ParamVector& lambda,
                      const ParamVector& g_omega, std::size_t K, double eps, const Batch& subset,
                      HvpBackend backend = HvpBackend::kFiniteDiff);

struct HypergradResult {
  ParamVector grad;
  ParamVector omega;  // inner solution
  ParamVector v;      // Neumann solution
  OuterPartials partials;
};

HypergradResult hypergradient(const BilevelProblem& p, const ParamVector& lambda, const HypergradConfig& cfg,
                              const BatchStream& stream, const Batch& subset, std::uint64_t seed);

// Exact gradient of L_out(omega_T(lambda), lambda) by reverse accumulation
// through the stored inner trajectory (forward-over-reverse products).
ParamVector unrolled_oracle(const BilevelProblem& p, const ParamVector& lambda, const HypergradConfig& cfg,
                            const BatchStream& stream, const Batch& subset, std::uint64_t seed);

}  // namespace dlab

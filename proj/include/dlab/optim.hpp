// Copyright 2026 The dlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "dlab/error.hpp"

namespace dlab {

// Adam with bias correction over a flat value vector.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void set_lr(double lr) noexcept { lr_ = lr; }
  double lr() const noexcept { return lr_; }
  std::size_t steps() const noexcept { return t_; }

  void step(std::span<double> values, std::span<const double> grad) {
    require(values.size() == grad.size(), ErrorCode::kShape, "adam: gradient size does not match values");
    if (m_.empty()) {
      m_.assign(values.size(), 0.0);
      v_.assign(values.size(), 0.0);
    }
    require(m_.size() == values.size(), ErrorCode::kShape, "adam: value size changed between steps");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < values.size(); ++i) {
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
      values[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<double> m_, v_;
};

// Cosine decay from lr to 0 over `total` steps.
inline double cosine_lr(double lr, std::size_t step, std::size_t total) {
  if (total == 0) return lr;
  constexpr double kPi = 3.14159265358979323846;
  return 0.5 * lr * (1.0 + std::cos(kPi * static_cast<double>(step) / static_cast<double>(total)));
}

}  // namespace dlab

// Copyright 2026 The milcascade Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "milcascade/tensors.hpp"

namespace milcascade {

/// Cosine decay from `base` to zero over `total_steps`.
inline double cosine_lr(double base, long step, long total_steps) {
    if (total_steps <= 1) return base;
    const double t = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
    return 0.5 * base * (1.0 + std::cos(std::numbers::pi * t));
}

/// SGD with heavy-ball momentum and L2 weight decay, over any visitable
/// parameter container.
template <class P>
class SgdMomentum {
  public:
    SgdMomentum(const P& params, double momentum, double weight_decay)
        : velocity_(zeros_like(params)), momentum_(momentum), weight_decay_(weight_decay) {}

    void step(P& params, const P& grads, double lr) {
        auto pv = tensor_ptrs(params);
        auto vv = tensor_ptrs(velocity_);
        auto gv = named_tensors(grads);
        for (std::size_t i = 0; i < pv.size(); ++i) {
            Eigen::MatrixXd& v = *vv[i];
            v = momentum_ * v + *gv[i].second + weight_decay_ * *pv[i];
            *pv[i] -= lr * v;
        }
    }

  private:
    P velocity_;
    double momentum_;
    double weight_decay_;
};

}  // namespace milcascade

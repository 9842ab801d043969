// Copyright 2026 The milcascade Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace milcascade {

/// Loss path whose analytic gradients are compared with central differences.
enum class GradTarget { kDmin, kCka, kFc, kMlp, kKaLite, kLipn };

const char* to_string(GradTarget t) noexcept;
/// Accepts dmin, cka, fc, mlp, ka-lite, lipn. Throws UserError otherwise.
GradTarget parse_grad_target(const std::string& name);

struct GradCheckOptions {
    int instances = 6;  // N
    int q_dim = 5;      // Q
    int order = 3;      // K
    int d_in = 4;       // input width (high- or low-resolution)
    int attn_dim = 3;
    double step = 1e-5;
    std::uint64_t seed = 0;
};

struct TensorError {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t entries = 0;
};

struct GradCheckReport {
    GradTarget target = GradTarget::kDmin;
    double max_rel_error = 0.0;
    std::string worst_tensor;
    std::size_t entries = 0;
    double tolerance = 0.0;
    bool passed = false;
    std::vector<TensorError> tensors;
};

/// Relative error used by the check: |a - n| / max(|a|, |n|, 1e-3).
double relative_error(double analytic, double numeric) noexcept;

/// Builds a random small instance for `target` and compares every analytic
/// parameter gradient with a central difference. Stochastic masks are pinned
/// to the decisions of the unperturbed point so the loss is smooth.
GradCheckReport grad_check(GradTarget target, double tolerance, const GradCheckOptions& options = {});

}  // namespace milcascade

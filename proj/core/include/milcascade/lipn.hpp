// Copyright 2026 The milcascade Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "milcascade/datamodel.hpp"
#include "milcascade/dmin.hpp"
#include "milcascade/rng.hpp"

namespace milcascade {

// Low-resolution instance pre-screening network. Scores every instance
// independently from its low-resolution features with two sigmoid heads on a
// shared ReLU hidden layer.

struct LipnShape {
    int d_lo = 32;
    int hidden = 64;
};

struct LipnHyper {
    double beta1 = 1.0;  // mask agreement (L1)
    double beta2 = 2.0;  // retention-ratio penalty
    double gamma = 0.5;
    double r = 0.5;

    void validate() const;
};

struct LipnParams {
    Matrix w1;  // D_lo x H
    Matrix b1;  // 1 x H
    Matrix w2;  // H x 2
    Matrix b2;  // 1 x 2

    static LipnParams random(const LipnShape& shape, std::uint64_t seed);

    int d_lo() const noexcept { return static_cast<int>(w1.rows()); }
    int hidden() const noexcept { return static_cast<int>(w1.cols()); }

    template <class Fn>
    void visit(Fn&& fn) {
        fn("w1", w1);
        fn("b1", b1);
        fn("w2", w2);
        fn("b2", b2);
    }
    template <class Fn>
    void visit(Fn&& fn) const {
        fn("w1", w1);
        fn("b1", b1);
        fn("w2", w2);
        fn("b2", b2);
    }
};

struct LipnForward {
    Matrix pre_hidden;  // N x H
    Matrix hidden;      // N x H
    Matrix p;           // N x 2, strictly inside (0, 1)
};

LipnForward lipn_forward_cached(const Matrix& lo, const LipnParams& params);

/// N x 2 instance scores.
Matrix lipn_forward(const Matrix& lo, const LipnParams& params);

/// hard = 1[P > gamma]; no noise.
MaskMatrix lipn_binarize(const Matrix& p, double gamma);

struct LipnLoss {
    double total = 0.0;
    double agreement = 0.0;  // mean over branches of the mean per-instance L1 distance
    double rate = 0.0;
    double r_tilde = 0.0;
    Matrix d_p;  // N x 2, d(total)/dP through the straight-through path
};

/// Hybrid loss against the frozen high-resolution mask `target_hard` (N x 2, 0/1).
///
/// `hard` / `soft_ref` / `soft` describe the LIPN mask: its value is
/// hard + soft - soft_ref. For binary targets the per-entry L1 distance on
/// [0, 1] is m + t - 2 m t, which is what gets evaluated and differentiated.
LipnLoss lipn_loss(const Matrix& hard, const Matrix& soft_ref, const Matrix& soft, const Matrix& target_hard,
                   const LipnHyper& h);

/// Convenience overload for a mask produced by lipn_binarize.
LipnLoss lipn_loss(const MaskMatrix& lr, const MaskMatrix& hr, const LipnHyper& h);

/// Mean squared error between P and per-branch min-max normalized attention.
/// A constant branch normalizes to 0.5. When `d_p` is non-null it receives
/// d(loss)/dP.
double attention_regression_loss(const Matrix& p, const Matrix& a_hr, Matrix* d_p = nullptr);

/// Per-branch min-max normalization used by attention_regression_loss.
Matrix normalize_attention(const Matrix& a);

/// Backpropagates d(loss)/dP into parameter gradients.
LipnParams lipn_backward(const LipnForward& fw, const LipnParams& params, const Matrix& lo, const Matrix& d_p);

/// Fraction of (instance, branch) entries where the two hard masks agree.
double mask_agreement(const Matrix& hard_a, const Matrix& hard_b);

}  // namespace milcascade

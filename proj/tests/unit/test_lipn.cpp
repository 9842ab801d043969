// Copyright 2026 The milcascade Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <numeric>

#include <gtest/gtest.h>

#include "milcascade/lipn.hpp"
#include "support.hpp"

namespace milcascade {
namespace {

using testing::Gen;

LipnParams params(Gen& g, int d = 4, int hidden = 6) {
    LipnParams p = LipnParams::random({d, hidden}, g());
    p.b1 = testing::normal_matrix(g, 1, hidden, 0.1);
    p.b2 = testing::normal_matrix(g, 1, 2, 0.1);
    return p;
}

Matrix random_hard(Gen& g, Eigen::Index n) {
    return (testing::uniform_matrix(g, n, 2, 0.0, 1.0).array() > 0.5).cast<double>().matrix();
}

TEST(LipnForward, OutputsStrictlyInsideUnitInterval) {
    Gen g(1);
    for (int trial = 0; trial < 20; ++trial) {
        const LipnParams p = params(g);
        const Matrix out = lipn_forward(testing::normal_matrix(g, 15, 4, 10.0), p);
        EXPECT_GT(out.minCoeff(), 0.0);
        EXPECT_LT(out.maxCoeff(), 1.0);
    }
}

TEST(LipnForward, MatchesScalarOracle) {
    Gen g(2);
    const LipnParams p = params(g, 3, 5);
    const Matrix lo = testing::normal_matrix(g, 4, 3);
    const Matrix out = lipn_forward(lo, p);
    for (int j = 0; j < 4; ++j)
        for (int c = 0; c < 2; ++c) {
            double z = p.b2(0, c);
            for (int k = 0; k < 5; ++k) {
                double hk = p.b1(0, k);
                for (int d = 0; d < 3; ++d) hk += lo(j, d) * p.w1(d, k);
                z += std::max(hk, 0.0) * p.w2(k, c);
            }
            EXPECT_NEAR(out(j, c), 1.0 / (1.0 + std::exp(-z)), 1e-14);
        }
}

TEST(LipnForward, PermutationEquivariant) {
    Gen g(3);
    for (int trial = 0; trial < 20; ++trial) {
        const LipnParams p = params(g);
        const int n = testing::uniform_int(g, 2, 20);
        const Matrix lo = testing::normal_matrix(g, n, 4);
        std::vector<int> perm(static_cast<std::size_t>(n));
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), g);
        Matrix permuted(n, 4);
        for (int j = 0; j < n; ++j) permuted.row(j) = lo.row(perm[static_cast<std::size_t>(j)]);
        const Matrix a = lipn_forward(lo, p), b = lipn_forward(permuted, p);
        for (int j = 0; j < n; ++j) EXPECT_EQ(b.row(j), a.row(perm[static_cast<std::size_t>(j)]));
    }
}

TEST(LipnForward, RejectsWrongWidth) {
    Gen g(4);
    EXPECT_THROW(lipn_forward(Matrix::Zero(3, 5), params(g)), ShapeError);
}

TEST(LipnLoss, ExactAgreementAtTargetRateIsZero) {
    Matrix hard(4, 2);
    hard << 1, 0, 0, 1, 0, 0, 0, 0;  // union keeps 2 of 4
    const MaskMatrix m{hard, hard};
    LipnHyper h;
    h.r = 0.5;
    const LipnLoss l = lipn_loss(m, m, h);
    EXPECT_EQ(l.total, 0.0);
    EXPECT_EQ(l.r_tilde, 0.5);
}

TEST(LipnLoss, ComplementGivesBetaOne) {
    Gen g(5);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix hard = random_hard(g, testing::uniform_int(g, 1, 20));
        const Matrix comp = (1.0 - hard.array()).matrix();
        LipnHyper h;
        h.beta1 = 1.7;
        h.beta2 = 0.0;
        EXPECT_NEAR(lipn_loss(MaskMatrix{comp, comp}, MaskMatrix{hard, hard}, h).total, 1.7, 1e-14);
    }
}

TEST(LipnLoss, ZeroIffAgreementAndRateBothHold) {
    Gen g(6);
    LipnHyper h;
    for (int trial = 0; trial < 200; ++trial) {
        const int n = testing::uniform_int(g, 1, 8);
        const Matrix a = random_hard(g, n), b = trial % 3 == 0 ? a : random_hard(g, n);
        h.r = static_cast<double>(testing::uniform_int(g, 1, n)) / n;
        const LipnLoss l = lipn_loss(MaskMatrix{a, a}, MaskMatrix{b, b}, h);
        double kept = 0.0;
        for (int j = 0; j < n; ++j) kept += a.row(j).maxCoeff();
        const bool ideal = a == b && kept / n == h.r;
        EXPECT_EQ(l.total == 0.0, ideal);
    }
}

TEST(LipnLoss, MatchesHandFormula) {
    Gen g(7);
    LipnHyper h;
    h.beta1 = 0.8;
    h.beta2 = 3.0;
    h.r = 0.35;
    for (int trial = 0; trial < 50; ++trial) {
        const int n = testing::uniform_int(g, 1, 15);
        const Matrix a = random_hard(g, n), b = random_hard(g, n);
        double l1 = 0.0;
        for (int c = 0; c < 2; ++c) {
            double col = 0.0;
            for (int j = 0; j < n; ++j) col += std::abs(a(j, c) - b(j, c));
            l1 += col / n;
        }
        double kept = 0.0;
        for (int j = 0; j < n; ++j) kept += std::max(a(j, 0), a(j, 1));
        const double expected = h.beta1 * l1 / 2.0 + h.beta2 * (kept / n - h.r) * (kept / n - h.r);
        EXPECT_NEAR(lipn_loss(MaskMatrix{a, a}, MaskMatrix{b, b}, h).total, expected, 1e-14);
    }
}

TEST(LipnBackward, MatchesFiniteDifferences) {
    // Hard outcome and reference scores are pinned at the starting point, so the
    // probed loss is the straight-through surrogate that backward differentiates.
    Gen g(8);
    for (int trial = 0; trial < 10; ++trial) {
        LipnParams p = params(g, 4, 5);
        const int n = testing::uniform_int(g, 2, 8);
        const Matrix lo = testing::normal_matrix(g, n, 4);
        const Matrix target = random_hard(g, n);
        LipnHyper h;
        h.r = std::uniform_real_distribution<double>(0.1, 0.9)(g);
        const LipnForward fw = lipn_forward_cached(lo, p);
        const MaskMatrix m = lipn_binarize(fw.p, h.gamma);
        const LipnParams grads = lipn_backward(fw, p, lo, lipn_loss(m.hard, fw.p, fw.p, target, h).d_p);
        const auto loss = [&] { return lipn_loss(m.hard, fw.p, lipn_forward(lo, p), target, h).total; };
        EXPECT_LT(testing::max_relative_error(grads.w1, testing::numeric_gradient(loss, p.w1)), 1e-4);
        EXPECT_LT(testing::max_relative_error(grads.b1, testing::numeric_gradient(loss, p.b1)), 1e-4);
        EXPECT_LT(testing::max_relative_error(grads.w2, testing::numeric_gradient(loss, p.w2)), 1e-4);
        EXPECT_LT(testing::max_relative_error(grads.b2, testing::numeric_gradient(loss, p.b2)), 1e-4);
    }
}

TEST(AttentionRegression, NormalizationAndGradient) {
    Matrix a(3, 2);
    a << 1, 5, 3, 5, 2, 5;
    Matrix expected(3, 2);
    expected << 0, 0.5, 1, 0.5, 0.5, 0.5;
    EXPECT_EQ(normalize_attention(a), expected);

    Gen g(9);
    Matrix p = testing::uniform_matrix(g, 6, 2, 0.05, 0.95);
    const Matrix att = testing::normal_matrix(g, 6, 2);
    Matrix d_p;
    const double l = attention_regression_loss(p, att, &d_p);
    EXPECT_NEAR(l, (p - normalize_attention(att)).array().square().mean(), 1e-15);
    EXPECT_LT(testing::max_relative_error(d_p, testing::numeric_gradient([&] { return attention_regression_loss(p, att); }, p)),
              1e-6);
}

TEST(MaskAgreement, CountsMatchingEntries) {
    Matrix a(2, 2), b(2, 2);
    a << 1, 0, 0, 1;
    b << 1, 1, 0, 0;
    EXPECT_DOUBLE_EQ(mask_agreement(a, b), 0.5);
    EXPECT_DOUBLE_EQ(mask_agreement(a, a), 1.0);
}

TEST(LipnHyper, ValidatesRanges) {
    LipnHyper h;
    EXPECT_NO_THROW(h.validate());
    h.beta1 = -1.0;
    EXPECT_THROW(h.validate(), UserError);
    h = {};
    h.r = 1.5;
    EXPECT_THROW(h.validate(), UserError);
}

}  // namespace
}  // namespace milcascade

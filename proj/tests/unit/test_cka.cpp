// Copyright 2026 The milcascade Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include <gtest/gtest.h>

#include "milcascade/cka.hpp"
#include "support.hpp"

namespace milcascade {
namespace {

using testing::Gen;

RowVector row(std::initializer_list<double> v) {
    RowVector r(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) r(i++) = x;
    return r;
}

TEST(Chebyshev, RecurrenceExamples) {
    const Matrix t = chebyshev_basis(row({0.5}), 3);
    EXPECT_DOUBLE_EQ(t(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(t(1, 0), 0.5);
    EXPECT_DOUBLE_EQ(t(2, 0), -0.5);
    EXPECT_DOUBLE_EQ(t(3, 0), -1.0);
}

TEST(Chebyshev, MatchesTrigonometricClosedForm) {
    Gen g(1);
    const RowVector x = testing::uniform_matrix(g, 1, 1000, -1.0, 1.0);
    const Matrix t = chebyshev_basis(x, 16);
    ASSERT_EQ(t.rows(), 17);
    ASSERT_EQ(t.cols(), 1000);
    for (int k = 0; k <= 16; ++k)
        for (int q = 0; q < 1000; ++q) {
            EXPECT_NEAR(t(k, q), std::cos(k * std::acos(x(q))), 1e-9);
            EXPECT_LE(std::abs(t(k, q)), 1.0 + 1e-12);
        }
}

TEST(Chebyshev, DerivativeMatchesFiniteDifferences) {
    Gen g(2);
    const RowVector x = testing::uniform_matrix(g, 1, 50, -0.99, 0.99);
    const Matrix d = chebyshev_basis_derivative(x, 8);
    const double h = 1e-6;
    RowVector up = x.array() + h, down = x.array() - h;
    const Matrix numeric = (chebyshev_basis(up, 8) - chebyshev_basis(down, 8)) / (2 * h);
    EXPECT_LT(testing::max_relative_error(d, numeric), 1e-6);
}

TEST(Chebyshev, DomainGuard) {
    EXPECT_THROW(chebyshev_basis(row({1.0 + 1e-6}), 3), UserError);
    EXPECT_THROW(chebyshev_basis(row({-1.1}), 3), UserError);
    const Matrix t = chebyshev_basis(row({1.0 + 1e-10}), 4);
    EXPECT_DOUBLE_EQ(t(4, 0), 1.0);  // clamped to 1
}

// Naive sum over q and k, written from the definition.
double naive_phi(const RowVector& x, const CkaParams& p, int o) {
    double s = 0.0;
    for (int q = 0; q < p.in_dim(); ++q)
        for (int k = 0; k <= p.order; ++k) s += std::cos(k * std::acos(x(q))) * p.coef(q, o, k);
    return s;
}

TEST(CkaForward, AffineCaseAndZeroCoefficients) {
    CkaParams p(1, 1, 1);
    p.coef(0, 0, 0) = 0.25;
    p.coef(0, 0, 1) = -2.0;
    EXPECT_DOUBLE_EQ(cka_forward(row({0.3}), p)(0), 0.25 - 2.0 * 0.3);
    const CkaParams zero(4, 2, 5);
    EXPECT_EQ(cka_forward(row({0.1, 0.2, -0.3, 0.9}), zero), Vector::Zero(2));
}

TEST(CkaForward, MatchesScalarLoopOracle) {
    Gen g(3);
    for (int trial = 0; trial < 30; ++trial) {
        const int q = testing::uniform_int(g, 1, 8), o = testing::uniform_int(g, 1, 3), k = testing::uniform_int(g, 1, 12);
        const CkaParams p = CkaParams::random(q, o, k, g);
        const RowVector x = testing::uniform_matrix(g, 1, q, -1.0, 1.0);
        const Vector phi = cka_forward(x, p);
        for (int j = 0; j < o; ++j) EXPECT_NEAR(phi(j), naive_phi(x, p, j), 1e-12);
    }
}

TEST(CkaForward, LinearInCoefficients) {
    Gen g(4);
    for (int trial = 0; trial < 20; ++trial) {
        const CkaParams a = CkaParams::random(5, 2, 6, g), b = CkaParams::random(5, 2, 6, g);
        const double s = std::normal_distribution<double>()(g), t = std::normal_distribution<double>()(g);
        CkaParams mix(5, 2, 6);
        mix.omega = s * a.omega + t * b.omega;
        const RowVector x = testing::uniform_matrix(g, 1, 5, -1.0, 1.0);
        const Vector lhs = cka_forward(x, mix), rhs = s * cka_forward(x, a) + t * cka_forward(x, b);
        EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(CkaBackward, MatchesFiniteDifferences) {
    Gen g(5);
    for (int trial = 0; trial < 10; ++trial) {
        CkaParams p = CkaParams::random(4, 2, 5, g);
        Matrix x = testing::uniform_matrix(g, 1, 4, -0.9, 0.9);
        const Vector w = testing::normal_matrix(g, 2, 1);
        CkaParams grad(4, 2, 5);
        const Matrix dx = cka_backward(x.row(0), p, w, grad);
        const auto loss = [&] { return w.dot(cka_forward(x.row(0), p)); };
        EXPECT_LT(testing::max_relative_error(grad.omega, testing::numeric_gradient(loss, p.omega)), 1e-6);
        EXPECT_LT(testing::max_relative_error(dx, testing::numeric_gradient(loss, x)), 1e-6);
    }
}

TEST(CkaParams, ParameterCountFormula) {
    for (int k : {4, 8, 12, 16}) {
        EXPECT_EQ(CkaParams(32, 1, k).parameter_count(), static_cast<std::size_t>(32 * (k + 1)));
    }
    Gen g(6);
    const ClassifierHead head = ClassifierHead::random(HeadKind::kCka, 10, 12, g);
    EXPECT_EQ(head.parameter_count(), 10u * 13u);
}

TEST(CkaParams, InitializationScale) {
    Gen g(7);
    const CkaParams p = CkaParams::random(32, 1, 12, g);
    const double sd = std::sqrt(p.omega.array().square().mean());
    EXPECT_NEAR(sd, 1.0 / (32 * 13), 0.2 / (32 * 13));
}

std::array<ClassifierHead, kBranches> cka_heads(Gen& g, int q, int k) {
    return {ClassifierHead::random(HeadKind::kCka, q, k, g), ClassifierHead::random(HeadKind::kCka, q, k, g)};
}

TEST(DualBranch, ZeroRepresentationGivesAlternatingSum) {
    Gen g(8);
    const auto heads = cka_heads(g, 3, 6);
    const Vector logits = dual_branch_predict(Matrix::Zero(2, 3), heads);
    for (int c = 0; c < kBranches; ++c) {
        const auto& p = std::get<CkaParams>(heads[static_cast<std::size_t>(c)].variant());
        double expected = 0.0;
        for (int q = 0; q < 3; ++q) expected += p.coef(q, 0, 0) - p.coef(q, 0, 2) + p.coef(q, 0, 4) - p.coef(q, 0, 6);
        EXPECT_NEAR(logits(c), expected, 1e-15);
    }
}

TEST(DualBranch, MatchesNaiveOracleOnSquashedInput) {
    Gen g(9);
    for (int trial = 0; trial < 20; ++trial) {
        const int q = testing::uniform_int(g, 1, 6);
        const auto heads = cka_heads(g, q, 12);
        const Matrix e = testing::normal_matrix(g, 2, q, 2.0);
        const Vector logits = dual_branch_predict(e, heads);
        for (int c = 0; c < kBranches; ++c) {
            const RowVector squashed = e.row(c).array().tanh();
            const auto& p = std::get<CkaParams>(heads[static_cast<std::size_t>(c)].variant());
            EXPECT_NEAR(logits(c), naive_phi(squashed, p, 0), 1e-12);
        }
    }
}

TEST(DualBranch, ZeroHeadsGiveZeroLogits) {
    Gen g(10);
    for (HeadKind kind : {HeadKind::kCka, HeadKind::kFc, HeadKind::kMlp, HeadKind::kKaLite}) {
        const ClassifierHead proto = ClassifierHead::random(kind, 4, 3, g);
        const std::array<ClassifierHead, kBranches> zero{ClassifierHead::zeros_like(proto),
                                                         ClassifierHead::zeros_like(proto)};
        EXPECT_EQ(baseline_heads(testing::normal_matrix(g, 2, 4), zero), Vector::Zero(2)) << to_string(kind);
    }
}

TEST(BaselineHeads, MlpWithIdentityHiddenLayerEqualsFc) {
    Gen g(11);
    const int q = 5;
    MlpHead mlp;
    mlp.hidden_weight = Matrix::Identity(q, q);
    mlp.hidden_bias = Matrix::Zero(1, q);
    mlp.out_weight = testing::normal_matrix(g, q, 1);
    mlp.out_bias = Matrix::Constant(1, 1, 0.3);
    FcHead fc{mlp.out_weight, mlp.out_bias};
    const ClassifierHead a{mlp}, b{fc};
    for (int trial = 0; trial < 10; ++trial) {
        const RowVector e = testing::uniform_matrix(g, 1, q, 0.0, 3.0);
        EXPECT_NEAR(a.forward(e), b.forward(e), 1e-14);
    }
}

// Piecewise-linear interpolation on a uniform grid over [-1, 1].
double naive_ka(const RowVector& e, const Matrix& knots) {
    const int grid = static_cast<int>(knots.rows());
    double s = 0.0;
    for (int q = 0; q < e.size(); ++q) {
        const double x = std::tanh(e(q));
        const double pos = (x + 1.0) / 2.0 * (grid - 1);
        const int i = std::min(static_cast<int>(std::floor(pos)), grid - 2);
        const double f = pos - i;
        s += (1.0 - f) * knots(i, q) + f * knots(i + 1, q);
    }
    return s;
}

TEST(BaselineHeads, KaLiteIsPiecewiseLinear) {
    Gen g(12);
    const ClassifierHead head = ClassifierHead::random(HeadKind::kKaLite, 4, 3, g);
    const Matrix& knots = std::get<KaLiteHead>(head.variant()).knots;
    for (int trial = 0; trial < 50; ++trial) {
        const RowVector e = testing::normal_matrix(g, 1, 4);
        EXPECT_NEAR(head.forward(e), naive_ka(e, knots), 1e-12);
    }
}

TEST(BaselineHeads, GradientsMatchFiniteDifferences) {
    Gen g(13);
    for (HeadKind kind : {HeadKind::kCka, HeadKind::kFc, HeadKind::kMlp, HeadKind::kKaLite}) {
        for (int trial = 0; trial < 5; ++trial) {
            ClassifierHead head = ClassifierHead::random(kind, 5, 4, g);
            head.visit([&](const std::string&, Matrix& m) { m += testing::normal_matrix(g, m.rows(), m.cols(), 0.1); });
            Matrix e = testing::normal_matrix(g, 1, 5);
            ClassifierHead grad = ClassifierHead::zeros_like(head);
            const Matrix de = head.backward(e.row(0), 1.0, grad);
            const auto loss = [&] { return head.forward(e.row(0)); };
            std::vector<Matrix*> params;
            head.visit([&](const std::string&, Matrix& m) { params.push_back(&m); });
            std::vector<const Matrix*> grads;
            grad.visit([&](const std::string&, const Matrix& m) { grads.push_back(&m); });
            for (std::size_t i = 0; i < params.size(); ++i) {
                EXPECT_LT(testing::max_relative_error(*grads[i], testing::numeric_gradient(loss, *params[i])), 1e-6)
                    << to_string(kind) << " tensor " << i;
            }
            EXPECT_LT(testing::max_relative_error(de, testing::numeric_gradient(loss, e)), 1e-6) << to_string(kind);
        }
    }
}

TEST(HeadKind, ParsesNames) {
    EXPECT_EQ(parse_head_kind("cka"), HeadKind::kCka);
    EXPECT_EQ(parse_head_kind("fc"), HeadKind::kFc);
    EXPECT_EQ(parse_head_kind("mlp"), HeadKind::kMlp);
    EXPECT_EQ(parse_head_kind("ka"), HeadKind::kKaLite);
    EXPECT_EQ(parse_head_kind("ka-lite"), HeadKind::kKaLite);
    EXPECT_THROW(parse_head_kind("svm"), UserError);
}

}  // namespace
}  // namespace milcascade

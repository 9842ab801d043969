// Copyright 2026 The milcascade Authors
// SPDX-License-Identifier: Apache-2.0

#include "milcascade/lipn.hpp"

#include <cmath>
#include <random>

namespace milcascade {

void LipnHyper::validate() const {
    if (!(beta1 >= 0.0 && beta2 >= 0.0)) throw UserError("LIPN loss weights must be >= 0");
    if (!(gamma > 0.0 && gamma < 1.0)) throw UserError("gamma must lie in (0, 1)");
    if (!(r > 0.0 && r <= 1.0)) throw UserError("retention ratio r must lie in (0, 1]");
}

LipnParams LipnParams::random(const LipnShape& s, std::uint64_t seed) {
    if (s.d_lo < 1 || s.hidden < 1) throw UserError("LIPN dimensions must be >= 1");
    Rng rng = make_rng(seed, {0x11b7ULL});
    auto xavier = [&](int rows, int cols) {
        const double bound = std::sqrt(6.0 / (rows + cols));
        std::uniform_real_distribution<double> ud(-bound, bound);
        Matrix m(rows, cols);
        for (int j = 0; j < cols; ++j)
            for (int i = 0; i < rows; ++i) m(i, j) = ud(rng);
        return m;
    };
    LipnParams p;
    p.w1 = xavier(s.d_lo, s.hidden);
    p.b1 = Matrix::Zero(1, s.hidden);
    p.w2 = xavier(s.hidden, kBranches);
    p.b2 = Matrix::Zero(1, kBranches);
    return p;
}

constexpr double kLogitClamp = 30.0;

LipnForward lipn_forward_cached(const Matrix& lo, const LipnParams& params) {
    if (lo.cols() != params.w1.rows()) {
        throw ShapeError("LIPN expects " + std::to_string(params.w1.rows()) + " low-resolution features, got " +
                         std::to_string(lo.cols()));
    }
    LipnForward fw;
    fw.pre_hidden = (lo * params.w1).rowwise() + params.b1.row(0);
    fw.hidden = fw.pre_hidden.cwiseMax(0.0);
    const Matrix z = (fw.hidden * params.w2).rowwise() + params.b2.row(0);
    // sigmoid(30) is 1 - 9e-14, which keeps P strictly inside (0, 1).
    fw.p = (1.0 / (1.0 + (-z.array().cwiseMax(-kLogitClamp).cwiseMin(kLogitClamp)).exp())).matrix();
    return fw;
}

Matrix lipn_forward(const Matrix& lo, const LipnParams& params) { return lipn_forward_cached(lo, params).p; }

MaskMatrix lipn_binarize(const Matrix& p, double gamma) { return binarize(p, gamma); }

LipnLoss lipn_loss(const Matrix& hard, const Matrix& soft_ref, const Matrix& soft, const Matrix& target,
                   const LipnHyper& h) {
    const Eigen::Index n = hard.rows();
    if (target.rows() != n || soft.rows() != n || soft_ref.rows() != n) throw ShapeError("LIPN loss shape mismatch");
    LipnLoss out;
    const Matrix m = hard + (soft - soft_ref);
    // |m - t| for t in {0, 1} and m in [0, 1].
    const Matrix dist = (m.array() + target.array() - 2.0 * m.array() * target.array()).matrix();
    out.agreement = dist.colwise().mean().sum() / kBranches;

    double kept = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
        kept += hard.row(j).maxCoeff() - soft_ref.row(j).maxCoeff() + soft.row(j).maxCoeff();
    }
    out.r_tilde = kept / static_cast<double>(n);
    out.rate = (out.r_tilde - h.r) * (out.r_tilde - h.r);
    out.total = h.beta1 * out.agreement + h.beta2 * out.rate;

    out.d_p = (h.beta1 / (kBranches * static_cast<double>(n))) * (1.0 - 2.0 * target.array()).matrix();
    const double d_r = h.beta2 * 2.0 * (out.r_tilde - h.r) / static_cast<double>(n);
    for (Eigen::Index j = 0; j < n; ++j) {
        Eigen::Index arg = 0;
        soft.row(j).maxCoeff(&arg);
        out.d_p(j, arg) += d_r;
    }
    return out;
}

LipnLoss lipn_loss(const MaskMatrix& lr, const MaskMatrix& hr, const LipnHyper& h) {
    return lipn_loss(lr.hard, lr.soft, lr.soft, hr.hard, h);
}

Matrix normalize_attention(const Matrix& a) {
    Matrix out(a.rows(), a.cols());
    for (Eigen::Index c = 0; c < a.cols(); ++c) {
        const double lo = a.col(c).minCoeff();
        const double hi = a.col(c).maxCoeff();
        if (hi - lo <= 0.0) out.col(c).setConstant(0.5);
        else out.col(c) = ((a.col(c).array() - lo) / (hi - lo)).matrix();
    }
    return out;
}

double attention_regression_loss(const Matrix& p, const Matrix& a_hr, Matrix* d_p) {
    if (p.rows() != a_hr.rows() || p.cols() != a_hr.cols()) throw ShapeError("attention regression shape mismatch");
    const Matrix diff = p - normalize_attention(a_hr);
    if (d_p != nullptr) *d_p = 2.0 * diff / static_cast<double>(diff.size());
    return diff.squaredNorm() / static_cast<double>(diff.size());
}

LipnParams lipn_backward(const LipnForward& fw, const LipnParams& params, const Matrix& lo, const Matrix& d_p) {
    LipnParams g;
    const Matrix d_z = (d_p.array() * fw.p.array() * (1.0 - fw.p.array())).matrix();
    g.w2 = fw.hidden.transpose() * d_z;
    g.b2 = d_z.colwise().sum();
    const Matrix d_pre = ((d_z * params.w2.transpose()).array() * (fw.pre_hidden.array() > 0.0).cast<double>()).matrix();
    g.w1 = lo.transpose() * d_pre;
    g.b1 = d_pre.colwise().sum();
    return g;
}

double mask_agreement(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("mask agreement shape mismatch");
    if (a.size() == 0) return 1.0;
    const auto same = ((a.array() > 0.5) == (b.array() > 0.5)).count();
    return static_cast<double>(same) / static_cast<double>(a.size());
}

}  // namespace milcascade

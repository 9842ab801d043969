// Copyright 2026 The milcascade Authors
// SPDX-License-Identifier: Apache-2.0

#include "milcascade/cka.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace milcascade {

namespace {

RowVector checked_domain(const RowVector& x) {
    for (Eigen::Index q = 0; q < x.size(); ++q) {
        if (!std::isfinite(x(q))) {
            throw NumericError("chebyshev input " + std::to_string(x(q)) + " at position " + std::to_string(q) +
                               " is not finite");
        }
        if (!(std::abs(x(q)) <= 1.0 + kChebyshevDomainSlack)) {
            throw UserError("chebyshev input " + std::to_string(x(q)) + " at position " + std::to_string(q) +
                            " lies outside [-1, 1]");
        }
    }
    return x.cwiseMax(-1.0).cwiseMin(1.0);
}

double xavier_bound(Eigen::Index fan_in, Eigen::Index fan_out) {
    return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
    std::uniform_real_distribution<double> ud(-bound, bound);
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = ud(rng);
    return m;
}

constexpr int kKaGridSize = 8;

double ka_grid_step(int grid) { return 2.0 / (grid - 1); }

/// Segment index and interpolation weight of x on the uniform grid.
std::pair<int, double> ka_locate(double x, int grid) {
    const double h = ka_grid_step(grid);
    int i = static_cast<int>(std::floor((x + 1.0) / h));
    i = std::clamp(i, 0, grid - 2);
    return {i, (x - (-1.0 + i * h)) / h};
}

RowVector squash(const RowVector& e) { return e.array().tanh().matrix(); }

}  // namespace

Matrix chebyshev_basis(const RowVector& x_in, int order) {
    if (order < 0) throw UserError("chebyshev order must be >= 0");
    const RowVector x = checked_domain(x_in);
    Matrix t(order + 1, x.size());
    t.row(0).setOnes();
    if (order >= 1) t.row(1) = x;
    for (int k = 2; k <= order; ++k) {
        t.row(k) = 2.0 * x.cwiseProduct(t.row(k - 1)) - t.row(k - 2);
    }
    return t;
}

Matrix chebyshev_basis_derivative(const RowVector& x_in, int order) {
    const RowVector x = checked_domain(x_in);
    const Matrix t = chebyshev_basis(x, order);
    Matrix dt = Matrix::Zero(order + 1, x.size());
    if (order >= 1) dt.row(1).setOnes();
    for (int k = 2; k <= order; ++k) {
        dt.row(k) = 2.0 * t.row(k - 1) + 2.0 * x.cwiseProduct(dt.row(k - 1)) - dt.row(k - 2);
    }
    return dt;
}

CkaParams::CkaParams(int in_dim, int out, int k) : order(k), out_dim(out), omega(Matrix::Zero(in_dim, out * (k + 1))) {
    if (in_dim < 1 || out < 1 || k < 1) throw UserError("cka layer needs Q >= 1, O >= 1, K >= 1");
}

CkaParams CkaParams::random(int in_dim, int out_dim, int order, Rng& rng) {
    CkaParams p(in_dim, out_dim, order);
    std::normal_distribution<double> nd(0.0, 1.0 / (static_cast<double>(in_dim) * (order + 1)));
    for (Eigen::Index i = 0; i < p.omega.size(); ++i) p.omega.data()[i] = nd(rng);
    return p;
}

Vector cka_forward(const RowVector& x, const CkaParams& p) {
    if (x.size() != p.in_dim()) throw ShapeError("cka input has " + std::to_string(x.size()) + " entries, expected " +
                                                 std::to_string(p.in_dim()));
    const Matrix t = chebyshev_basis(x, p.order);  // (K+1) x Q
    Vector out(p.out_dim);
    for (int o = 0; o < p.out_dim; ++o) {
        // sum over q and k of T_k[q] * omega[q, o, k]
        const auto block = p.omega.middleCols(o * (p.order + 1), p.order + 1);  // Q x (K+1)
        out(o) = (t.transpose().array() * block.array()).sum();
    }
    return out;
}

RowVector cka_backward(const RowVector& x, const CkaParams& p, const Vector& d_out, CkaParams& grad) {
    if (x.size() != p.in_dim() || d_out.size() != p.out_dim) throw ShapeError("cka backward shape mismatch");
    const Matrix t = chebyshev_basis(x, p.order);
    const Matrix dt = chebyshev_basis_derivative(x, p.order);
    RowVector dx = RowVector::Zero(x.size());
    for (int o = 0; o < p.out_dim; ++o) {
        const auto block = p.omega.middleCols(o * (p.order + 1), p.order + 1);
        grad.omega.middleCols(o * (p.order + 1), p.order + 1) += d_out(o) * t.transpose();
        dx += d_out(o) * (dt.transpose().array() * block.array()).rowwise().sum().matrix().transpose();
    }
    return dx;
}

// --- heads -------------------------------------------------------------------------

const char* to_string(HeadKind kind) noexcept {
    switch (kind) {
        case HeadKind::kCka: return "cka";
        case HeadKind::kFc: return "fc";
        case HeadKind::kMlp: return "mlp";
        case HeadKind::kKaLite: return "ka-lite";
    }
    return "unknown";
}

HeadKind parse_head_kind(const std::string& name) {
    if (name == "cka") return HeadKind::kCka;
    if (name == "fc") return HeadKind::kFc;
    if (name == "mlp") return HeadKind::kMlp;
    if (name == "ka" || name == "ka-lite") return HeadKind::kKaLite;
    throw UserError("unknown classifier kind '" + name + "' (expected cka, fc, mlp or ka-lite)");
}

ClassifierHead ClassifierHead::random(HeadKind kind, int in_dim, int order, Rng& rng) {
    switch (kind) {
        case HeadKind::kCka: return ClassifierHead(CkaParams::random(in_dim, 1, order, rng));
        case HeadKind::kFc: {
            FcHead h;
            h.weight = uniform_matrix(in_dim, 1, xavier_bound(in_dim, 1), rng);
            h.bias = Matrix::Zero(1, 1);
            return ClassifierHead(std::move(h));
        }
        case HeadKind::kMlp: {
            const int hidden = std::max(1, in_dim / 2);
            MlpHead h;
            h.hidden_weight = uniform_matrix(in_dim, hidden, xavier_bound(in_dim, hidden), rng);
            h.hidden_bias = Matrix::Zero(1, hidden);
            h.out_weight = uniform_matrix(hidden, 1, xavier_bound(hidden, 1), rng);
            h.out_bias = Matrix::Zero(1, 1);
            return ClassifierHead(std::move(h));
        }
        case HeadKind::kKaLite: {
            // Start from random linear activations sampled on the grid.
            KaLiteHead h;
            h.knots.resize(kKaGridSize, in_dim);
            const Matrix slope = uniform_matrix(1, in_dim, xavier_bound(in_dim, 1), rng);
            for (int g = 0; g < kKaGridSize; ++g) h.knots.row(g) = (-1.0 + g * ka_grid_step(kKaGridSize)) * slope;
            return ClassifierHead(std::move(h));
        }
    }
    throw UserError("unknown classifier kind");
}

ClassifierHead ClassifierHead::zeros_like(const ClassifierHead& like) {
    ClassifierHead out = like;
    out.visit([](const std::string&, Matrix& m) { m.setZero(); });
    return out;
}

HeadKind ClassifierHead::kind() const noexcept {
    return static_cast<HeadKind>(head_.index());
}

bool ClassifierHead::squashes_input() const noexcept {
    return kind() == HeadKind::kCka || kind() == HeadKind::kKaLite;
}

std::size_t ClassifierHead::parameter_count() const {
    std::size_t n = 0;
    visit([&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
}

double ClassifierHead::forward(const RowVector& e) const {
    const RowVector x = squashes_input() ? squash(e) : e;
    return std::visit(
        [&](const auto& h) -> double {
            using T = std::decay_t<decltype(h)>;
            if constexpr (std::is_same_v<T, CkaParams>) {
                return cka_forward(x, h)(0);
            } else if constexpr (std::is_same_v<T, FcHead>) {
                return (x * h.weight)(0, 0) + h.bias(0, 0);
            } else if constexpr (std::is_same_v<T, MlpHead>) {
                const RowVector hidden = (x * h.hidden_weight + h.hidden_bias).cwiseMax(0.0);
                return (hidden * h.out_weight)(0, 0) + h.out_bias(0, 0);
            } else {
                double sum = 0.0;
                for (Eigen::Index q = 0; q < x.size(); ++q) {
                    const auto [i, w] = ka_locate(x(q), h.grid_size());
                    sum += (1.0 - w) * h.knots(i, q) + w * h.knots(i + 1, q);
                }
                return sum;
            }
        },
        head_);
}

RowVector ClassifierHead::backward(const RowVector& e, double d_logit, ClassifierHead& grad) const {
    if (grad.kind() != kind()) throw UserError("gradient head kind mismatch");
    const RowVector x = squashes_input() ? squash(e) : e;
    RowVector dx = std::visit(
        [&](const auto& h) -> RowVector {
            using T = std::decay_t<decltype(h)>;
            auto& g = std::get<T>(grad.head_);
            if constexpr (std::is_same_v<T, CkaParams>) {
                return cka_backward(x, h, Vector::Constant(1, d_logit), g);
            } else if constexpr (std::is_same_v<T, FcHead>) {
                g.weight += d_logit * x.transpose();
                g.bias(0, 0) += d_logit;
                return d_logit * h.weight.transpose();
            } else if constexpr (std::is_same_v<T, MlpHead>) {
                const RowVector pre = x * h.hidden_weight + h.hidden_bias;
                const RowVector hidden = pre.cwiseMax(0.0);
                g.out_weight += d_logit * hidden.transpose();
                g.out_bias(0, 0) += d_logit;
                const RowVector d_pre =
                    (d_logit * h.out_weight.transpose()).cwiseProduct((pre.array() > 0.0).cast<double>().matrix());
                g.hidden_weight += x.transpose() * d_pre;
                g.hidden_bias += d_pre;
                return d_pre * h.hidden_weight.transpose();
            } else {
                const double step = ka_grid_step(h.grid_size());
                RowVector out(x.size());
                for (Eigen::Index q = 0; q < x.size(); ++q) {
                    const auto [i, w] = ka_locate(x(q), h.grid_size());
                    g.knots(i, q) += d_logit * (1.0 - w);
                    g.knots(i + 1, q) += d_logit * w;
                    out(q) = d_logit * (h.knots(i + 1, q) - h.knots(i, q)) / step;
                }
                return out;
            }
        },
        head_);
    if (squashes_input()) dx = dx.cwiseProduct((1.0 - x.array().square()).matrix());
    return dx;
}

Vector dual_branch_predict(const Matrix& e, const std::array<ClassifierHead, kBranches>& heads) {
    if (e.rows() != kBranches) throw ShapeError("dual-branch representation must have 2 rows");
    Vector logits(kBranches);
    for (int c = 0; c < kBranches; ++c) logits(c) = heads[static_cast<std::size_t>(c)].forward(e.row(c));
    return logits;
}

Matrix dual_branch_backward(const Matrix& e, const std::array<ClassifierHead, kBranches>& heads,
                            const Vector& d_logits, std::array<ClassifierHead, kBranches>& grads) {
    Matrix de(kBranches, e.cols());
    for (int c = 0; c < kBranches; ++c) {
        const auto i = static_cast<std::size_t>(c);
        de.row(c) = heads[i].backward(e.row(c), d_logits(c), grads[i]);
    }
    return de;
}

}  // namespace milcascade

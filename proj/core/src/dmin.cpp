// Copyright 2026 The milcascade Authors
// SPDX-License-Identifier: Apache-2.0

#include "milcascade/dmin.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "milcascade/logging.hpp"

namespace milcascade {

namespace {

Matrix xavier(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> ud(-bound, bound);
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = ud(rng);
    return m;
}

Matrix sigmoid_of(const Matrix& z) { return (1.0 / (1.0 + (-z.array()).exp())).matrix(); }

/// Softmax pooling of one branch, optionally weighted by a mask column.
struct BranchPool {
    Vector weights;
    Vector unnormalized;  // exp(A - shift), before the mask factor
    RowVector representation;
    double z = 1.0;
};

BranchPool pool_branch(const Matrix& f, const Eigen::Ref<const Vector>& a, const Vector* mask_value,
                       const Eigen::Ref<const Vector>* hard) {
    const Eigen::Index n = a.size();
    double shift = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n; ++j) {
        if (hard == nullptr || (*hard)(j) > 0.5) shift = std::max(shift, a(j));
    }
    BranchPool out;
    out.unnormalized = (a.array() - shift).exp().matrix();
    Vector e = out.unnormalized;
    if (mask_value != nullptr) e = e.cwiseProduct(*mask_value);
    out.z = e.sum();
    out.weights = e / out.z;
    out.representation = out.weights.transpose() * f;
    return out;
}

void check_rows(const Matrix& a, const Matrix& b, const char* what) {
    if (a.rows() != b.rows()) throw ShapeError(std::string(what) + ": instance counts differ");
}

}  // namespace

void DminHyper::validate() const {
    if (!(tau > 0.0)) throw UserError("tau must be > 0");
    if (!(gamma > 0.0 && gamma < 1.0)) throw UserError("gamma must lie in (0, 1)");
    if (!(r > 0.0 && r <= 1.0)) throw UserError("retention ratio r must lie in (0, 1]");
    if (topk < 0) throw UserError("topk must be >= 0");
    for (double a : {alphas.cls, alphas.clu, alphas.dis1, alphas.dis2, alphas.rate}) {
        if (!(a >= 0.0)) throw UserError("loss weights must be >= 0");
    }
}

DminParams DminParams::random(const DminShape& s, std::uint64_t seed) {
    if (s.d_hi < 1 || s.q_dim < 1 || s.attn_dim < 1) throw UserError("DMIN dimensions must be >= 1");
    Rng rng = make_rng(seed, {0xd313ULL});
    DminParams p;
    p.proj_w = xavier(s.d_hi, s.q_dim, rng);
    p.proj_b = Matrix::Zero(1, s.q_dim);
    p.attn_v = xavier(s.q_dim, s.attn_dim, rng);
    p.attn_u = xavier(s.q_dim, s.attn_dim, rng);
    p.attn_w = xavier(s.attn_dim, kBranches, rng);
    for (std::size_t c = 0; c < kBranches; ++c) {
        p.inst_w[c] = xavier(s.q_dim, 2, rng);
        p.inst_b[c] = Matrix::Zero(1, 2);
    }
    for (std::size_t c = 0; c < kBranches; ++c) p.heads[c] = ClassifierHead::random(s.head, s.q_dim, s.order, rng);
    return p;
}

Matrix project(const Matrix& x, const DminParams& p) {
    if (x.cols() != p.proj_w.rows()) {
        throw ShapeError("projection expects " + std::to_string(p.proj_w.rows()) + " input features, got " +
                         std::to_string(x.cols()));
    }
    return ((x * p.proj_w).rowwise() + p.proj_b.row(0)).cwiseMax(0.0);
}

Matrix gated_attention(const Matrix& f, const DminParams& p) {
    if (f.cols() != p.attn_v.rows()) throw ShapeError("attention input width does not match Q");
    const Matrix gate = (f * p.attn_v).array().tanh().matrix().cwiseProduct(sigmoid_of(f * p.attn_u));
    return gate * p.attn_w;
}

Aggregate teacher_aggregate(const Matrix& f, const Matrix& a) {
    check_rows(f, a, "teacher_aggregate");
    Aggregate out;
    out.representation.resize(kBranches, f.cols());
    out.weights.resize(f.rows(), kBranches);
    for (int c = 0; c < kBranches; ++c) {
        const BranchPool pool = pool_branch(f, a.col(c), nullptr, nullptr);
        out.weights.col(c) = pool.weights;
        out.representation.row(c) = pool.representation;
    }
    return out;
}

Matrix gumbel_noise(int n, Rng& rng) {
    Matrix g(n, kBranches);
    for (int c = 0; c < kBranches; ++c) {
        for (int j = 0; j < n; ++j) {
            const double g1 = -std::log(-std::log(uniform_open(rng)));
            const double g2 = -std::log(-std::log(uniform_open(rng)));
            g(j, c) = g1 - g2;
        }
    }
    return g;
}

MaskMatrix gumbel_mask(const Matrix& a, const Matrix& noise, const DminHyper& h) {
    if (a.rows() != noise.rows() || a.cols() != noise.cols()) throw ShapeError("gumbel noise shape mismatch");
    return binarize(sigmoid_of((a + noise) / h.tau), h.gamma);
}

MaskMatrix gumbel_mask(const Matrix& a, const DminHyper& h, Rng& rng, bool train_mode) {
    const Matrix noise =
        train_mode ? gumbel_noise(static_cast<int>(a.rows()), rng) : Matrix::Zero(a.rows(), a.cols()).eval();
    return gumbel_mask(a, noise, h);
}

Aggregate student_aggregate(const Matrix& f, const Matrix& a, const MaskMatrix& mask) {
    check_rows(f, a, "student_aggregate");
    check_rows(a, mask.hard, "student_aggregate");
    Aggregate out;
    out.representation.resize(kBranches, f.cols());
    out.weights.resize(f.rows(), kBranches);
    for (int c = 0; c < kBranches; ++c) {
        if ((mask.hard.col(c).array() > 0.5).count() == 0) throw DegenerateMaskError(c);
        const Vector m = mask.hard.col(c);
        const Eigen::Ref<const Vector> hard = mask.hard.col(c);
        const BranchPool pool = pool_branch(f, a.col(c), &m, &hard);
        out.weights.col(c) = pool.weights;
        out.representation.row(c) = pool.representation;
    }
    return out;
}

double retention_ratio(const MaskMatrix& mask) { return mask.union_fraction(); }

double clustering_loss(const Matrix& f, const Matrix& a, const DminParams& p, int label, const DminHyper& h,
                       ClusteringGrad* grad) {
    check_rows(f, a, "clustering_loss");
    const int n = static_cast<int>(f.rows());
    const int k = std::min(h.topk, n / 4);
    if (grad != nullptr) {
        grad->d_f = Matrix::Zero(f.rows(), f.cols());
        for (std::size_t c = 0; c < kBranches; ++c) {
            grad->d_inst_w[c] = Matrix::Zero(p.inst_w[c].rows(), p.inst_w[c].cols());
            grad->d_inst_b[c] = Matrix::Zero(1, 2);
        }
    }
    if (k == 0) {
        if (h.topk > 0) log_warning("clustering loss skipped: bag has " + std::to_string(n) + " instances");
        return 0.0;
    }
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    const auto col = a.col(label);
    std::stable_sort(order.begin(), order.end(), [&](int x, int y) { return col(x) > col(y); });

    const auto c = static_cast<std::size_t>(label);
    const Matrix& w = p.inst_w[c];
    const Matrix& b = p.inst_b[c];
    double loss = 0.0;
    const double scale = 1.0 / (2.0 * k);
    auto visit_instance = [&](int j, int target) {
        const Vector logits = (f.row(j) * w + b).transpose();
        loss += cross_entropy(logits, target);
        if (grad != nullptr) {
            Vector d = softmax(logits);
            d(target) -= 1.0;
            d *= scale;
            grad->d_inst_w[c] += f.row(j).transpose() * d.transpose();
            grad->d_inst_b[c] += d.transpose();
            grad->d_f.row(j) += (w * d).transpose();
        }
    };
    for (int i = 0; i < k; ++i) visit_instance(order[static_cast<std::size_t>(i)], 1);
    for (int i = 0; i < k; ++i) visit_instance(order[static_cast<std::size_t>(n - 1 - i)], 0);
    return loss * scale;
}

DminForward dmin_forward(const DminParams& p, const Matrix& x, const DminHyper& h, const Matrix& noise,
                         const FrozenMask* frozen) {
    DminForward fw;
    if (x.cols() != p.proj_w.rows()) {
        throw ShapeError("DMIN expects " + std::to_string(p.proj_w.rows()) + " input features, got " +
                         std::to_string(x.cols()));
    }
    const Eigen::Index n = x.rows();
    fw.pre_proj = (x * p.proj_w).rowwise() + p.proj_b.row(0);
    fw.f = fw.pre_proj.cwiseMax(0.0);
    fw.tanh_v = (fw.f * p.attn_v).array().tanh().matrix();
    fw.sig_u = sigmoid_of(fw.f * p.attn_u);
    fw.a = fw.tanh_v.cwiseProduct(fw.sig_u) * p.attn_w;
    fw.noise = noise;

    fw.teacher = teacher_aggregate(fw.f, fw.a);

    fw.mask = gumbel_mask(fw.a, noise, h);
    if (frozen != nullptr) {
        if (frozen->hard.rows() != n || frozen->soft_ref.rows() != n) throw ShapeError("frozen mask shape mismatch");
        fw.mask.hard = frozen->hard;
        fw.soft_ref = frozen->soft_ref;
    } else {
        fw.soft_ref = fw.mask.soft;
    }
    const Matrix m = fw.mask_value();

    fw.student.representation.resize(kBranches, fw.f.cols());
    fw.student.weights.resize(n, kBranches);
    for (int c = 0; c < kBranches; ++c) {
        const auto ci = static_cast<std::size_t>(c);
        const Eigen::Ref<const Vector> hard = fw.mask.hard.col(c);
        fw.degenerate[ci] = (hard.array() > 0.5).count() == 0;
        BranchPool pool;
        if (fw.degenerate[ci]) {
            pool = pool_branch(fw.f, fw.a.col(c), nullptr, nullptr);
        } else {
            const Vector mc = m.col(c);
            pool = pool_branch(fw.f, fw.a.col(c), &mc, &hard);
        }
        fw.student.weights.col(c) = pool.weights;
        fw.student.representation.row(c) = pool.representation;
    }

    fw.logits_tea = dual_branch_predict(fw.teacher.representation, p.heads);
    fw.logits_stu = dual_branch_predict(fw.student.representation, p.heads);

    // Union through the straight-through path: max over hard decisions, with
    // the gradient routed to the branch holding the larger soft value.
    double kept = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
        kept += fw.mask.hard.row(j).maxCoeff() - fw.soft_ref.row(j).maxCoeff() + fw.mask.soft.row(j).maxCoeff();
    }
    fw.r_hat = kept / static_cast<double>(n);
    return fw;
}

DminForward dmin_forward_eval(const DminParams& p, const Matrix& x, const DminHyper& h) {
    return dmin_forward(p, x, h, Matrix::Zero(x.rows(), kBranches));
}

LossBreakdown dmin_loss(const DminForward& fw, const DminParams& p, int label, const DminHyper& h,
                        const DminForward* targets) {
    const DminForward& tea = targets != nullptr ? *targets : fw;
    LossBreakdown l;
    l.cls = cross_entropy(fw.logits_tea, label);
    l.clu = h.alphas.clu > 0.0 ? clustering_loss(fw.f, fw.a, p, label, h) : 0.0;
    l.dis1 = (fw.student.representation - tea.teacher.representation).squaredNorm() /
             static_cast<double>(fw.student.representation.size());
    l.dis2 = kl_divergence(tea.logits_tea, fw.logits_stu);
    l.rate = (fw.r_hat - h.r) * (fw.r_hat - h.r);
    l.total = h.alphas.cls * l.cls + h.alphas.clu * l.clu + h.alphas.dis1 * l.dis1 + h.alphas.dis2 * l.dis2 +
              h.alphas.rate * l.rate;
    return l;
}

DminParams dmin_backward(const DminForward& fw, const DminParams& p, const Matrix& x, int label,
                         const DminHyper& h) {
    DminParams g = zeros_like(p);
    const Eigen::Index n = x.rows();
    const Eigen::Index q = fw.f.cols();
    const LossWeights& al = h.alphas;

    // Classifier heads, shared by the teacher and student paths.
    Vector d_tea = softmax(fw.logits_tea);
    d_tea(label) -= 1.0;
    d_tea *= al.cls;
    const Vector d_stu = al.dis2 * (softmax(fw.logits_stu) - softmax(fw.logits_tea));

    Matrix d_e_tea = dual_branch_backward(fw.teacher.representation, p.heads, d_tea, g.heads);
    Matrix d_e_stu = dual_branch_backward(fw.student.representation, p.heads, d_stu, g.heads);
    d_e_stu += al.dis1 * 2.0 / static_cast<double>(fw.student.representation.size()) *
               (fw.student.representation - fw.teacher.representation);

    Matrix d_f = Matrix::Zero(n, q);
    Matrix d_a = Matrix::Zero(n, kBranches);
    Matrix d_soft = Matrix::Zero(n, kBranches);

    const Matrix m = fw.mask_value();
    for (int c = 0; c < kBranches; ++c) {
        const auto ci = static_cast<std::size_t>(c);
        // Teacher pooling.
        {
            const RowVector gvec = d_e_tea.row(c);
            const Vector w = fw.teacher.weights.col(c);
            const Vector dw = fw.f * gvec.transpose();
            const double gbar = fw.teacher.representation.row(c).dot(gvec);
            d_a.col(c) += w.cwiseProduct((dw.array() - gbar).matrix());
            d_f += w * gvec;
        }
        // Student pooling; mask factors receive straight-through gradients.
        {
            const RowVector gvec = d_e_stu.row(c);
            const Vector w = fw.student.weights.col(c);
            const Vector dw = fw.f * gvec.transpose();
            const double gbar = fw.student.representation.row(c).dot(gvec);
            const Vector common = (dw.array() - gbar).matrix();
            d_a.col(c) += w.cwiseProduct(common);
            d_f += w * gvec;
            if (!fw.degenerate[ci]) {
                const Eigen::Ref<const Vector> hard = fw.mask.hard.col(c);
                const Vector mc = m.col(c);
                const BranchPool pool = pool_branch(fw.f, fw.a.col(c), &mc, &hard);
                d_soft.col(c) += pool.unnormalized.cwiseProduct(common) / pool.z;
            }
        }
    }

    // Retention penalty through the union.
    const double d_rhat = al.rate * 2.0 * (fw.r_hat - h.r) / static_cast<double>(n);
    for (Eigen::Index j = 0; j < n; ++j) {
        Eigen::Index arg = 0;
        fw.mask.soft.row(j).maxCoeff(&arg);
        d_soft(j, arg) += d_rhat;
    }
    const Matrix& s = fw.mask.soft;
    d_a += (d_soft.array() * s.array() * (1.0 - s.array()) / h.tau).matrix();

    // Clustering loss on the projected features.
    if (al.clu > 0.0) {
        ClusteringGrad cg;
        clustering_loss(fw.f, fw.a, p, label, h, &cg);
        d_f += al.clu * cg.d_f;
        for (std::size_t c = 0; c < kBranches; ++c) {
            g.inst_w[c] += al.clu * cg.d_inst_w[c];
            g.inst_b[c] += al.clu * cg.d_inst_b[c];
        }
    }

    // Gated attention.
    const Matrix gated = fw.tanh_v.cwiseProduct(fw.sig_u);
    g.attn_w = gated.transpose() * d_a;
    const Matrix d_gated = d_a * p.attn_w.transpose();
    const Matrix d_pre_v =
        (d_gated.array() * fw.sig_u.array() * (1.0 - fw.tanh_v.array().square())).matrix();
    const Matrix d_pre_u =
        (d_gated.array() * fw.tanh_v.array() * fw.sig_u.array() * (1.0 - fw.sig_u.array())).matrix();
    g.attn_v = fw.f.transpose() * d_pre_v;
    g.attn_u = fw.f.transpose() * d_pre_u;
    d_f += d_pre_v * p.attn_v.transpose() + d_pre_u * p.attn_u.transpose();

    // Projection.
    const Matrix d_pre = (d_f.array() * (fw.pre_proj.array() > 0.0).cast<double>()).matrix();
    g.proj_w = x.transpose() * d_pre;
    g.proj_b = d_pre.colwise().sum();
    return g;
}

Vector softmax(const Vector& z) {
    const Vector e = (z.array() - z.maxCoeff()).exp().matrix();
    return e / e.sum();
}

double cross_entropy(const Vector& logits, int label) {
    const double m = logits.maxCoeff();
    const double lse = m + std::log((logits.array() - m).exp().sum());
    return lse - logits(label);
}

double kl_divergence(const Vector& target_logits, const Vector& pred_logits) {
    const auto log_softmax = [](const Vector& z) {
        const double m = z.maxCoeff();
        return (z.array() - (m + std::log((z.array() - m).exp().sum()))).matrix().eval();
    };
    const Vector lt = log_softmax(target_logits);
    const Vector lp = log_softmax(pred_logits);
    return (lt.array().exp() * (lt - lp).array()).sum();
}

}  // namespace milcascade

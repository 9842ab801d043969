// Copyright 2026 The milcascade Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <optional>
#include <string>

#include "milcascade/cka.hpp"
#include "milcascade/datamodel.hpp"
#include "milcascade/rng.hpp"

namespace milcascade {

// Dynamic MIL network: projection -> dual-branch gated attention -> teacher
// aggregation over all instances and student aggregation over the instances a
// straight-through Gumbel mask keeps -> per-branch classifier heads.

struct DminShape {
    int d_hi = 64;
    int q_dim = 32;
    int attn_dim = 16;
    int order = 12;
    HeadKind head = HeadKind::kCka;
};

struct LossWeights {
    double cls = 0.7;   // teacher cross-entropy
    double clu = 0.3;   // instance clustering
    double dis1 = 0.5;  // representation distillation
    double dis2 = 0.5;  // logit distillation (KL)
    double rate = 2.0;  // retention-ratio penalty
};

struct DminHyper {
    double tau = 1.0;
    double gamma = 0.5;
    double r = 0.5;
    LossWeights alphas;
    int topk = 8;

    /// Throws UserError on out-of-range values.
    void validate() const;
};

struct DminParams {
    Matrix proj_w;  // D_hi x Q
    Matrix proj_b;  // 1 x Q
    Matrix attn_v;  // Q x H  (tanh gate)
    Matrix attn_u;  // Q x H  (sigmoid gate)
    Matrix attn_w;  // H x 2
    std::array<Matrix, kBranches> inst_w;  // Q x 2, clustering instance classifiers
    std::array<Matrix, kBranches> inst_b;  // 1 x 2
    std::array<ClassifierHead, kBranches> heads;

    /// Xavier-uniform matrices, head-specific initialization for the heads.
    static DminParams random(const DminShape& shape, std::uint64_t seed);

    int d_hi() const noexcept { return static_cast<int>(proj_w.rows()); }
    int q_dim() const noexcept { return static_cast<int>(proj_w.cols()); }
    int attn_dim() const noexcept { return static_cast<int>(attn_v.cols()); }

    template <class Fn>
    void visit(Fn&& fn) {
        visit_impl(*this, fn);
    }
    template <class Fn>
    void visit(Fn&& fn) const {
        visit_impl(*this, fn);
    }

  private:
    template <class Self, class Fn>
    static void visit_impl(Self& self, Fn& fn) {
        fn("proj_w", self.proj_w);
        fn("proj_b", self.proj_b);
        fn("attn_v", self.attn_v);
        fn("attn_u", self.attn_u);
        fn("attn_w", self.attn_w);
        for (int c = 0; c < kBranches; ++c) {
            const std::string b = std::to_string(c);
            fn("inst_w" + b, self.inst_w[static_cast<std::size_t>(c)]);
            fn("inst_b" + b, self.inst_b[static_cast<std::size_t>(c)]);
        }
        for (int c = 0; c < kBranches; ++c) {
            const std::string prefix = "head" + std::to_string(c) + ".";
            self.heads[static_cast<std::size_t>(c)].visit(
                [&](const std::string& name, auto& m) { fn(prefix + name, m); });
        }
    }
};

// --- building blocks -------------------------------------------------------------

/// ReLU(x * W + b), N x Q.
Matrix project(const Matrix& x, const DminParams& p);

/// [tanh(F V) .* sigmoid(F U)] W, N x 2 un-normalized attention.
Matrix gated_attention(const Matrix& f, const DminParams& p);

struct Aggregate {
    Matrix representation;  // 2 x Q
    Matrix weights;         // N x 2, columns sum to 1
};

/// Softmax-attention pooling over all instances, per branch.
Aggregate teacher_aggregate(const Matrix& f, const Matrix& a);

/// Difference of two independent standard Gumbel draws per entry, N x 2.
Matrix gumbel_noise(int n, Rng& rng);

/// soft = sigmoid((A + noise) / tau), hard = 1[soft > gamma]. Pass a zero
/// noise matrix for eval mode.
MaskMatrix gumbel_mask(const Matrix& a, const Matrix& noise, const DminHyper& h);

/// Draws noise from `rng` in train mode; eval mode is noise-free and
/// deterministic.
MaskMatrix gumbel_mask(const Matrix& a, const DminHyper& h, Rng& rng, bool train_mode);

class DegenerateMaskError : public NumericError {
  public:
    explicit DegenerateMaskError(int branch)
        : NumericError("mask keeps no instance in branch " + std::to_string(branch)), branch_(branch) {}
    int branch() const noexcept { return branch_; }

  private:
    int branch_;
};

/// Softmax pooling restricted to masked-in instances (weights exp(A) * M,
/// renormalized). Throws DegenerateMaskError if a branch keeps nothing.
Aggregate student_aggregate(const Matrix& f, const Matrix& a, const MaskMatrix& mask);

/// Fraction of instances kept by either branch.
double retention_ratio(const MaskMatrix& mask);

struct ClusteringGrad {
    Matrix d_f;                             // N x Q
    std::array<Matrix, kBranches> d_inst_w;  // Q x 2
    std::array<Matrix, kBranches> d_inst_b;  // 1 x 2
};

/// Top-k / bottom-k pseudo-labelled instance loss on the label's branch.
/// The effective k is min(topk, floor(N / 4)); returns 0 when that is 0.
/// When `grad` is non-null, accumulates d(loss)/d(inputs) (unweighted).
double clustering_loss(const Matrix& f, const Matrix& a, const DminParams& p, int label, const DminHyper& h,
                       ClusteringGrad* grad = nullptr);

// --- full network ------------------------------------------------------------------

/// Straight-through state held fixed across evaluations. Gradient checks pin
/// the binarization outcome of a reference point so the mask value becomes
/// hard + soft - soft_ref, a smooth function of the parameters.
struct FrozenMask {
    Matrix hard;
    Matrix soft_ref;
};

struct DminForward {
    Matrix pre_proj;  // N x Q, before ReLU
    Matrix f;         // N x Q
    Matrix tanh_v;    // N x H
    Matrix sig_u;     // N x H
    Matrix a;         // N x 2
    Matrix noise;     // N x 2
    MaskMatrix mask;  // hard decisions and current soft values
    Matrix soft_ref;  // N x 2, soft values the hard decisions were taken from
    Aggregate teacher;
    Aggregate student;
    std::array<bool, kBranches> degenerate{false, false};  // branch fell back to teacher weights
    Vector logits_tea;
    Vector logits_stu;
    double r_hat = 0.0;

    /// Straight-through mask value hard + (soft - soft_ref).
    Matrix mask_value() const { return mask.hard + (mask.soft - soft_ref); }
};

/// Runs the network. `noise` (N x 2) perturbs the mask logits; zeros give the
/// deterministic eval-mode masks. A degenerate student branch falls back to
/// teacher weights and is flagged.
DminForward dmin_forward(const DminParams& p, const Matrix& x, const DminHyper& h, const Matrix& noise,
                         const FrozenMask* frozen = nullptr);

/// Eval-mode forward (no noise).
DminForward dmin_forward_eval(const DminParams& p, const Matrix& x, const DminHyper& h);

struct LossBreakdown {
    double total = 0.0;
    double cls = 0.0;
    double clu = 0.0;
    double dis1 = 0.0;
    double dis2 = 0.0;
    double rate = 0.0;
};

/// Weighted hybrid loss. Teacher quantities inside the distillation terms are
/// treated as constants. When `targets` is given, the distillation terms read
/// the teacher representation and logits from it instead of from `fwd`, which
/// lets a finite-difference probe hold the detached targets fixed.
LossBreakdown dmin_loss(const DminForward& fwd, const DminParams& p, int label, const DminHyper& h,
                        const DminForward* targets = nullptr);

/// Analytic gradient of dmin_loss with respect to every parameter. Masks pass
/// gradients straight through to their soft values.
DminParams dmin_backward(const DminForward& fwd, const DminParams& p, const Matrix& x, int label,
                         const DminHyper& h);

// --- small numeric helpers shared by the trainers ------------------------------------

Vector softmax(const Vector& z);
double cross_entropy(const Vector& logits, int label);
/// KL(softmax(target) || softmax(pred)).
double kl_divergence(const Vector& target_logits, const Vector& pred_logits);
inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace milcascade

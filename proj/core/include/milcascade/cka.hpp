// Copyright 2026 The milcascade Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <string>
#include <variant>
#include <vector>

#include "milcascade/datamodel.hpp"
#include "milcascade/rng.hpp"
#include "milcascade/tensors.hpp"

namespace milcascade {

/// Inputs may exceed [-1, 1] by this much before the domain check fires;
/// accepted values are clamped.
inline constexpr double kChebyshevDomainSlack = 1e-9;

/// Rows T_0..T_K of the first-kind Chebyshev basis evaluated at each entry
/// of `x`; result is (K+1) x Q. Throws UserError when |x_q| > 1 + slack.
Matrix chebyshev_basis(const RowVector& x, int order);

/// Derivatives dT_k/dx at each entry, same layout as chebyshev_basis.
Matrix chebyshev_basis_derivative(const RowVector& x, int order);

/// Learnable coefficients of a Chebyshev Kolmogorov-Arnold layer.
///
/// `omega` is Q x (O * (K+1)); coefficient (q, o, k) lives at column
/// o * (K+1) + k.
struct CkaParams {
    int order = 12;
    int out_dim = 1;
    Matrix omega;

    CkaParams() = default;
    CkaParams(int in_dim, int out_dim, int order);

    int in_dim() const noexcept { return static_cast<int>(omega.rows()); }
    double& coef(int q, int o, int k) { return omega(q, o * (order + 1) + k); }
    double coef(int q, int o, int k) const { return omega(q, o * (order + 1) + k); }
    /// Exactly Q * O * (K+1).
    std::size_t parameter_count() const noexcept { return static_cast<std::size_t>(omega.size()); }

    /// Normal(0, 1 / (Q * (K+1))) initialization.
    static CkaParams random(int in_dim, int out_dim, int order, Rng& rng);

    template <class Fn>
    void visit(Fn&& fn) { fn("omega", omega); }
    template <class Fn>
    void visit(Fn&& fn) const { fn("omega", omega); }
};

/// Phi(x)[o] = sum_k sum_q T_k(x)[q] * omega[q, o, k]. x is 1 x Q.
Vector cka_forward(const RowVector& x, const CkaParams& p);

/// Accumulates d(loss)/d(omega) into `grad` and returns d(loss)/dx given
/// d(loss)/dPhi.
RowVector cka_backward(const RowVector& x, const CkaParams& p, const Vector& d_out, CkaParams& grad);

// --- branch classifier heads ---------------------------------------------------

enum class HeadKind { kCka, kFc, kMlp, kKaLite };

const char* to_string(HeadKind kind) noexcept;
/// Accepts "cka", "fc", "mlp", "ka" / "ka-lite". Throws UserError otherwise.
HeadKind parse_head_kind(const std::string& name);

/// Linear Q -> 1.
struct FcHead {
    Matrix weight;  // Q x 1
    Matrix bias;    // 1 x 1

    template <class Fn>
    void visit(Fn&& fn) {
        fn("weight", weight);
        fn("bias", bias);
    }
    template <class Fn>
    void visit(Fn&& fn) const {
        fn("weight", weight);
        fn("bias", bias);
    }
};

/// Q -> Q/2 -> 1 with a ReLU hidden layer.
struct MlpHead {
    Matrix hidden_weight;  // Q x H
    Matrix hidden_bias;    // 1 x H
    Matrix out_weight;     // H x 1
    Matrix out_bias;       // 1 x 1

    template <class Fn>
    void visit(Fn&& fn) {
        fn("hidden_weight", hidden_weight);
        fn("hidden_bias", hidden_bias);
        fn("out_weight", out_weight);
        fn("out_bias", out_bias);
    }
    template <class Fn>
    void visit(Fn&& fn) const {
        fn("hidden_weight", hidden_weight);
        fn("hidden_bias", hidden_bias);
        fn("out_weight", out_weight);
        fn("out_bias", out_bias);
    }
};

/// Per-dimension piecewise-linear activation on a uniform grid over [-1, 1],
/// summed over dimensions. `knots` is G x Q: column q holds the activation
/// values of dimension q at the G grid points.
struct KaLiteHead {
    Matrix knots;

    int grid_size() const noexcept { return static_cast<int>(knots.rows()); }

    template <class Fn>
    void visit(Fn&& fn) { fn("knots", knots); }
    template <class Fn>
    void visit(Fn&& fn) const { fn("knots", knots); }
};

/// One branch's classifier, mapping a 1 x Q bag representation to a logit.
class ClassifierHead {
  public:
    using Variant = std::variant<CkaParams, FcHead, MlpHead, KaLiteHead>;

    ClassifierHead() = default;
    explicit ClassifierHead(Variant v) : head_(std::move(v)) {}

    static ClassifierHead random(HeadKind kind, int in_dim, int order, Rng& rng);
    /// Same kind and shapes as `like`, all zeros.
    static ClassifierHead zeros_like(const ClassifierHead& like);

    HeadKind kind() const noexcept;
    const Variant& variant() const noexcept { return head_; }
    Variant& variant() noexcept { return head_; }

    /// Whether the head expects tanh-squashed inputs. CKA and KA-lite operate on
    /// [-1, 1]; the FC and MLP baselines see the raw representation.
    bool squashes_input() const noexcept;

    /// Logit for one branch representation `e` (1 x Q), squashing applied here.
    double forward(const RowVector& e) const;
    /// Accumulates parameter gradients into `grad` (same kind); returns
    /// d(loss)/d(e) given d(loss)/d(logit).
    RowVector backward(const RowVector& e, double d_logit, ClassifierHead& grad) const;

    std::size_t parameter_count() const;

    template <class Fn>
    void visit(Fn&& fn) {
        std::visit([&](auto& h) { h.visit(fn); }, head_);
    }
    template <class Fn>
    void visit(Fn&& fn) const {
        std::visit([&](const auto& h) { h.visit(fn); }, head_);
    }

  private:
    Variant head_;
};

/// Logits [head_0(E_0), head_1(E_1)] for a 2 x Q representation.
Vector dual_branch_predict(const Matrix& e, const std::array<ClassifierHead, kBranches>& heads);

/// Backward of dual_branch_predict: accumulates head gradients, returns dE.
Matrix dual_branch_backward(const Matrix& e, const std::array<ClassifierHead, kBranches>& heads,
                            const Vector& d_logits, std::array<ClassifierHead, kBranches>& grads);

/// Logits from the baseline heads; identical to dual_branch_predict but kept as
/// a separate entry point for the classifier ablation.
inline Vector baseline_heads(const Matrix& e, const std::array<ClassifierHead, kBranches>& heads) {
    return dual_branch_predict(e, heads);
}

}  // namespace milcascade

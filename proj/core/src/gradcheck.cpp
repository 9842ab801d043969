// Copyright 2026 The milcascade Authors
// SPDX-License-Identifier: Apache-2.0

#include "milcascade/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "milcascade/dmin.hpp"
#include "milcascade/lipn.hpp"
#include "milcascade/rng.hpp"
#include "milcascade/tensors.hpp"

namespace milcascade {

const char* to_string(GradTarget t) noexcept {
    switch (t) {
        case GradTarget::kDmin: return "dmin";
        case GradTarget::kCka: return "cka";
        case GradTarget::kFc: return "fc";
        case GradTarget::kMlp: return "mlp";
        case GradTarget::kKaLite: return "ka-lite";
        case GradTarget::kLipn: return "lipn";
    }
    return "unknown";
}

GradTarget parse_grad_target(const std::string& name) {
    for (GradTarget t : {GradTarget::kDmin, GradTarget::kCka, GradTarget::kFc, GradTarget::kMlp, GradTarget::kKaLite,
                         GradTarget::kLipn}) {
        if (name == to_string(t)) return t;
    }
    if (name == "ka") return GradTarget::kKaLite;
    throw UserError("unknown grad-check target '" + name + "' (expected dmin, cka, fc, mlp, ka-lite or lipn)");
}

double relative_error(double analytic, double numeric) noexcept {
    const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-3});
    return std::abs(analytic - numeric) / scale;
}

namespace {

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, double sigma, Rng& rng) {
    std::normal_distribution<double> nd(0.0, sigma);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
    return m;
}

/// Moves every parameter off its initialization so zero-initialized biases
/// are exercised too.
template <class P>
void jitter(P& params, Rng& rng) {
    for (Eigen::MatrixXd* m : tensor_ptrs(params)) *m += gaussian(m->rows(), m->cols(), 0.1, rng);
}

void add_tensor(GradCheckReport& rep, const std::string& name, const Matrix& analytic, Matrix& value,
                const std::function<double()>& loss, double step) {
    TensorError te;
    te.name = name;
    for (Eigen::Index i = 0; i < value.size(); ++i) {
        const double saved = value.data()[i];
        value.data()[i] = saved + step;
        const double up = loss();
        value.data()[i] = saved - step;
        const double down = loss();
        value.data()[i] = saved;
        const double numeric = (up - down) / (2.0 * step);
        te.max_rel_error = std::max(te.max_rel_error, relative_error(analytic.data()[i], numeric));
        ++te.entries;
    }
    rep.entries += te.entries;
    if (te.max_rel_error >= rep.max_rel_error) {
        rep.max_rel_error = te.max_rel_error;
        rep.worst_tensor = te.name;
    }
    rep.tensors.push_back(std::move(te));
}

template <class P>
void compare_all(GradCheckReport& rep, P& params, const P& grads, const std::function<double()>& loss, double step) {
    const auto analytic = named_tensors(grads);
    std::vector<std::pair<std::string, Eigen::MatrixXd*>> slots;
    params.visit([&](const std::string& name, Eigen::MatrixXd& m) { slots.emplace_back(name, &m); });
    for (std::size_t i = 0; i < slots.size(); ++i) {
        add_tensor(rep, slots[i].first, *analytic[i].second, *slots[i].second, loss, step);
    }
}

void check_dmin(GradCheckReport& rep, const GradCheckOptions& o, Rng& rng) {
    DminShape shape;
    shape.d_hi = o.d_in;
    shape.q_dim = o.q_dim;
    shape.attn_dim = o.attn_dim;
    shape.order = o.order;
    shape.head = HeadKind::kCka;
    DminParams p = DminParams::random(shape, rng());
    jitter(p, rng);
    const Matrix x = gaussian(o.instances, o.d_in, 1.0, rng);
    const int label = static_cast<int>(rng() & 1U);
    DminHyper h;
    h.topk = std::max(1, o.instances / 4);
    const Matrix noise = gumbel_noise(o.instances, rng);

    const DminForward ref = dmin_forward(p, x, h, noise);
    const FrozenMask frozen{ref.mask.hard, ref.mask.soft};
    const DminForward fw = dmin_forward(p, x, h, noise, &frozen);
    const DminParams grads = dmin_backward(fw, p, x, label, h);
    // Distillation targets are detached, so they stay at the reference point.
    const auto loss = [&] { return dmin_loss(dmin_forward(p, x, h, noise, &frozen), p, label, h, &fw).total; };
    compare_all(rep, p, grads, loss, o.step);
}

void check_cka(GradCheckReport& rep, const GradCheckOptions& o, Rng& rng) {
    const int out = 3;
    CkaParams p = CkaParams::random(o.q_dim, out, o.order, rng);
    p.omega += gaussian(p.omega.rows(), p.omega.cols(), 0.1, rng);
    std::uniform_real_distribution<double> ud(-0.95, 0.95);
    Matrix x(1, o.q_dim);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = ud(rng);
    const Vector w = gaussian(out, 1, 1.0, rng);
    CkaParams grad(o.q_dim, out, o.order);
    const Matrix dx = cka_backward(x.row(0), p, w, grad);
    const auto loss = [&] { return w.dot(cka_forward(x.row(0), p)); };
    add_tensor(rep, "omega", grad.omega, p.omega, loss, o.step);
    add_tensor(rep, "input", dx, x, loss, o.step);
}

void check_head(GradCheckReport& rep, const GradCheckOptions& o, Rng& rng, HeadKind kind) {
    std::array<ClassifierHead, 1> head{ClassifierHead::random(kind, o.q_dim, o.order, rng)};
    jitter(head[0], rng);
    Matrix e = gaussian(1, o.q_dim, 1.0, rng);
    const double c = std::normal_distribution<double>(0.0, 1.0)(rng);
    ClassifierHead grad = ClassifierHead::zeros_like(head[0]);
    const Matrix de = head[0].backward(e.row(0), c, grad);
    const auto loss = [&] { return c * head[0].forward(e.row(0)); };
    compare_all(rep, head[0], grad, loss, o.step);
    add_tensor(rep, "input", de, e, loss, o.step);
}

void check_lipn(GradCheckReport& rep, const GradCheckOptions& o, Rng& rng) {
    LipnShape shape;
    shape.d_lo = o.d_in;
    shape.hidden = o.q_dim;
    LipnParams p = LipnParams::random(shape, rng());
    jitter(p, rng);
    const Matrix lo = gaussian(o.instances, o.d_in, 1.0, rng);
    Matrix target(o.instances, kBranches);
    for (Eigen::Index i = 0; i < target.size(); ++i) target.data()[i] = static_cast<double>(rng() & 1U);
    LipnHyper h;

    const LipnForward fw = lipn_forward_cached(lo, p);
    const MaskMatrix m = lipn_binarize(fw.p, h.gamma);
    const LipnLoss l = lipn_loss(m.hard, fw.p, fw.p, target, h);
    const LipnParams grads = lipn_backward(fw, p, lo, l.d_p);
    const auto loss = [&] { return lipn_loss(m.hard, fw.p, lipn_forward(lo, p), target, h).total; };
    compare_all(rep, p, grads, loss, o.step);
}

}  // namespace

GradCheckReport grad_check(GradTarget target, double tolerance, const GradCheckOptions& o) {
    if (o.instances < 1 || o.q_dim < 1 || o.order < 1 || o.d_in < 1 || o.attn_dim < 1 || !(o.step > 0.0)) {
        throw UserError("grad-check dimensions and step must be positive");
    }
    GradCheckReport rep;
    rep.target = target;
    rep.tolerance = tolerance;
    Rng rng = make_rng(o.seed, {fnv1a64("grad-check"), static_cast<std::uint64_t>(target)});
    switch (target) {
        case GradTarget::kDmin: check_dmin(rep, o, rng); break;
        case GradTarget::kCka: check_cka(rep, o, rng); break;
        case GradTarget::kFc: check_head(rep, o, rng, HeadKind::kFc); break;
        case GradTarget::kMlp: check_head(rep, o, rng, HeadKind::kMlp); break;
        case GradTarget::kKaLite: check_head(rep, o, rng, HeadKind::kKaLite); break;
        case GradTarget::kLipn: check_lipn(rep, o, rng); break;
    }
    rep.passed = rep.max_rel_error <= tolerance;
    return rep;
}

}  // namespace milcascade

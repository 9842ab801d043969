// Copyright 2026 The milcascade Authors
// SPDX-License-Identifier: Apache-2.0

#include "milcascade/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "milcascade/infersim.hpp"
#include "milcascade/logging.hpp"
#include "milcascade/optim.hpp"
#include "milcascade/tensors.hpp"

namespace milcascade {

const char* to_string(TrainStage s) noexcept { return s == TrainStage::kDmin ? "dmin" : "lipn"; }

const char* to_string(DistillManner m) noexcept { return m == DistillManner::kMask ? "mask" : "attention"; }

DistillManner parse_distill_manner(const std::string& name) {
    if (name == "mask") return DistillManner::kMask;
    if (name == "attention" || name == "attn") return DistillManner::kAttention;
    throw UserError("unknown distill manner '" + name + "' (expected mask or attention)");
}

TrainConfig TrainConfig::defaults(TrainStage stage) {
    TrainConfig c;
    c.stage = stage;
    c.learning_rate = stage == TrainStage::kDmin ? 1e-3 : 1e-2;
    return c;
}

void TrainConfig::validate() const {
    if (epochs < 1) throw UserError("epochs must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw UserError("learning_rate must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw UserError("momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw UserError("weight_decay must be >= 0");
    if (!(clip_norm >= 0.0)) throw UserError("clip_norm must be >= 0");
    if (patience < 0) throw UserError("patience must be >= 0");
    if (q_dim < 1 || attn_dim < 1 || lipn_hidden < 1) throw UserError("model widths must be >= 1");
    if (order < 1) throw UserError("order must be >= 1");
    if (!(r > 0.0 && r <= 1.0)) throw UserError("r must lie in (0, 1]");
}

std::string TrainConfig::canonical() const {
    std::ostringstream s;
    s.precision(17);
    s << "stage=" << to_string(stage) << ";epochs=" << epochs << ";learning_rate=" << learning_rate
      << ";momentum=" << momentum << ";weight_decay=" << weight_decay << ";clip_norm=" << clip_norm
      << ";seed=" << seed << ";patience=" << patience << ";q_dim=" << q_dim << ";attn_dim=" << attn_dim
      << ";lipn_hidden=" << lipn_hidden << ";head=" << to_string(head) << ";order=" << order
      << ";self_distill=" << (self_distill ? 1 : 0) << ";manner=" << to_string(manner) << ";r=" << r;
    return s.str();
}

std::uint64_t TrainConfig::hash() const { return fnv1a64(canonical()); }

std::string hex_hash(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

DminHyper dmin_hyper_for(const TrainConfig& cfg, DminHyper base) {
    base.r = cfg.r;
    if (!cfg.self_distill) {
        base.alphas.dis1 = 0.0;
        base.alphas.dis2 = 0.0;
        base.alphas.rate = 0.0;
    }
    return base;
}

LipnHyper lipn_hyper_for(const TrainConfig& cfg, LipnHyper base) {
    base.r = cfg.r;
    return base;
}

MeanStd MetricsReport::auc() const {
    std::vector<double> v;
    for (const auto& f : folds) v.push_back(f.auc);
    return mean_std(v);
}

MeanStd MetricsReport::acc() const {
    std::vector<double> v;
    for (const auto& f : folds) v.push_back(f.acc);
    return mean_std(v);
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

/// Fisher-Yates with raw 64-bit draws so the permutation only depends on the
/// generator, not on the standard library's distribution implementation.
std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

template <class P>
void clip_gradients(P& grads, double max_norm) {
    if (max_norm <= 0.0) return;
    double sq = 0.0;
    for (auto* m : tensor_ptrs(grads)) sq += m->squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        for (auto* m : tensor_ptrs(grads)) *m *= max_norm / norm;
    }
}

void check_dmin_loss(const LossBreakdown& l, int epoch, const std::string& bag_id) {
    const std::pair<const char*, double> terms[] = {
        {"cls", l.cls}, {"clu", l.clu}, {"dis1", l.dis1}, {"dis2", l.dis2}, {"rate", l.rate}, {"total", l.total}};
    for (const auto& [name, v] : terms) {
        if (!std::isfinite(v)) {
            throw DivergenceError(name, "value " + std::to_string(v) + " at epoch " + std::to_string(epoch) +
                                            ", bag " + bag_id);
        }
    }
}

bool better_selection(double auc, double loss, double best_auc, double best_loss) {
    const bool a_nan = std::isnan(auc);
    const bool b_nan = std::isnan(best_auc);
    if (!a_nan && (b_nan || auc > best_auc)) return true;
    if ((a_nan && b_nan) || auc == best_auc) return loss < best_loss;
    return false;
}

double safe_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    bool pos = false, neg = false;
    for (int l : labels) (l == 1 ? pos : neg) = true;
    if (!pos || !neg) return kNaN;
    return compute_auc(scores, labels);
}

}  // namespace

double mask_recall(const MaskMatrix& mask, const std::vector<bool>& relevance) {
    if (relevance.size() != static_cast<std::size_t>(mask.instances())) {
        throw ShapeError("relevance vector length does not match the mask");
    }
    int relevant = 0, kept = 0;
    for (int j = 0; j < mask.instances(); ++j) {
        if (!relevance[static_cast<std::size_t>(j)]) continue;
        ++relevant;
        if (mask.kept(j)) ++kept;
    }
    return relevant == 0 ? kNaN : static_cast<double>(kept) / relevant;
}

EvalSummary evaluate_dmin(const std::vector<const BagPair*>& bags, const DminParams& params, const DminHyper& h,
                          EvalBranch branch) {
    EvalSummary s;
    if (bags.empty()) return s;
    double loss = 0.0, r_hat = 0.0;
    long relevant = 0, kept_relevant = 0;
    std::vector<int> predictions;
    for (const BagPair* bag : bags) {
        const DminForward fw = dmin_forward_eval(params, bag->hi().values(), h);
        const Vector& logits = branch == EvalBranch::kStudent ? fw.logits_stu : fw.logits_tea;
        s.scores.push_back(softmax(logits)(1));
        s.labels.push_back(bag->label());
        predictions.push_back(logits(1) > logits(0) ? 1 : 0);
        loss += dmin_loss(fw, params, bag->label(), h).total;
        r_hat += fw.mask.union_fraction();
        if (bag->truth_relevance()) {
            const auto& rel = *bag->truth_relevance();
            for (std::size_t j = 0; j < rel.size(); ++j) {
                if (!rel[j]) continue;
                ++relevant;
                if (fw.mask.kept(static_cast<int>(j))) ++kept_relevant;
            }
        }
    }
    const double n = static_cast<double>(bags.size());
    s.loss = loss / n;
    s.r_hat = r_hat / n;
    s.auc = safe_auc(s.scores, s.labels);
    s.acc = accuracy(predictions, s.labels);
    if (relevant > 0) s.recall = static_cast<double>(kept_relevant) / static_cast<double>(relevant);
    return s;
}

DminRun train_dmin(const std::vector<BagPair>& bags, const SplitSpec& split, const TrainConfig& cfg,
                   const DminHyper& hyper) {
    cfg.validate();
    hyper.validate();
    split.validate(bags);
    const auto train = select_bags(bags, split.train_ids);
    const auto valid = select_bags(bags, split.valid_ids);
    const auto test = select_bags(bags, split.test_ids);
    if (train.empty()) throw UserError("training split is empty");

    DminRun run;
    run.hyper = hyper;
    if (!cfg.self_distill) {
        run.hyper.alphas.dis1 = 0.0;
        run.hyper.alphas.dis2 = 0.0;
        run.hyper.alphas.rate = 0.0;
    }
    const DminHyper& h = run.hyper;
    const EvalBranch branch = cfg.self_distill ? EvalBranch::kStudent : EvalBranch::kTeacher;

    DminShape shape;
    shape.d_hi = static_cast<int>(train.front()->hi().cols());
    shape.q_dim = cfg.q_dim;
    shape.attn_dim = cfg.attn_dim;
    shape.order = cfg.order;
    shape.head = cfg.head;
    DminParams params = DminParams::random(shape, derive_seed(cfg.seed, {fnv1a64("dmin-init")}));
    SgdMomentum<DminParams> opt(params, cfg.momentum, cfg.weight_decay);

    const auto t0 = Clock::now();
    const long total_steps = static_cast<long>(cfg.epochs) * static_cast<long>(train.size());
    long step = 0;
    DminParams best = params;
    double best_auc = kNaN, best_loss = std::numeric_limits<double>::infinity();
    int best_epoch = 0, since_best = 0;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng order_rng = make_rng(cfg.seed, {fnv1a64("dmin-order"), static_cast<std::uint64_t>(epoch)});
        const auto order = permutation(train.size(), order_rng);
        EpochRecord rec;
        rec.epoch = epoch;
        for (std::size_t i : order) {
            const BagPair& bag = *train[i];
            Rng noise_rng = make_rng(cfg.seed, {fnv1a64("gumbel"), static_cast<std::uint64_t>(epoch), fnv1a64(bag.id())});
            const Matrix noise = gumbel_noise(bag.instances(), noise_rng);
            const Matrix& x = bag.hi().values();
            DminForward fw;
            LossBreakdown l;
            try {
                fw = dmin_forward(params, x, h, noise);
                l = dmin_loss(fw, params, bag.label(), h);
            } catch (const DivergenceError&) {
                throw;
            } catch (const NumericError& e) {
                throw DivergenceError("forward", std::string(e.what()) + " at epoch " + std::to_string(epoch) +
                                                     ", bag " + bag.id());
            }
            check_dmin_loss(l, epoch, bag.id());
            DminParams grads = dmin_backward(fw, params, x, bag.label(), h);
            if (!all_finite(grads)) throw DivergenceError("gradient", "non-finite gradient at bag " + bag.id());
            clip_gradients(grads, cfg.clip_norm);
            opt.step(params, grads, cosine_lr(cfg.learning_rate, step++, total_steps));
            if (!all_finite(params)) throw DivergenceError("parameters", "non-finite update at bag " + bag.id());
            rec.train.total += l.total;
            rec.train.cls += l.cls;
            rec.train.clu += l.clu;
            rec.train.dis1 += l.dis1;
            rec.train.dis2 += l.dis2;
            rec.train.rate += l.rate;
        }
        const double n = static_cast<double>(train.size());
        rec.train.total /= n;
        rec.train.cls /= n;
        rec.train.clu /= n;
        rec.train.dis1 /= n;
        rec.train.dis2 /= n;
        rec.train.rate /= n;

        if (!valid.empty()) {
            const EvalSummary v = evaluate_dmin(valid, params, h, branch);
            rec.val_auc = v.auc;
            rec.val_loss = v.loss;
            rec.val_r_hat = v.r_hat;
        }
        run.history.push_back(rec);

        if (valid.empty() || better_selection(rec.val_auc, rec.val_loss, best_auc, best_loss)) {
            best = params;
            best_auc = rec.val_auc;
            best_loss = rec.val_loss;
            best_epoch = epoch;
            since_best = 0;
        } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
            log_info("early stop at epoch " + std::to_string(epoch) + " (best " + std::to_string(best_epoch) + ")");
            break;
        }
    }
    run.metrics.train_seconds = seconds_since(t0);

    const auto t1 = Clock::now();
    const auto& held_out = test.empty() ? valid : test;
    FoldMetrics& m = run.metrics;
    m.fold = split.fold_index;
    m.best_epoch = best_epoch;
    m.val_auc = best_auc;
    if (!held_out.empty()) {
        const EvalSummary last = evaluate_dmin(held_out, params, h, branch);
        m.last_auc = last.auc;
        m.last_acc = last.acc;
        const EvalSummary e = evaluate_dmin(held_out, best, h, branch);
        m.auc = e.auc;
        m.acc = e.acc;
        m.loss = e.loss;
        m.r_hat = e.r_hat;
        m.recall = e.recall;
    }
    m.eval_seconds = seconds_since(t1);
    run.params = std::move(best);
    return run;
}

AgreementSummary evaluate_lipn(const std::vector<const BagPair*>& bags, const LipnParams& lipn,
                               const DminParams& dmin, const DminHyper& dmin_hyper, const LipnHyper& h,
                               DistillManner manner) {
    AgreementSummary s;
    if (bags.empty()) return s;
    double agree = 0.0, r = 0.0, loss = 0.0;
    for (const BagPair* bag : bags) {
        const DminForward target = dmin_forward_eval(dmin, bag->hi().values(), dmin_hyper);
        const Matrix p = lipn_forward(bag->lo().values(), lipn);
        const MaskMatrix m = lipn_binarize(p, h.gamma);
        agree += mask_agreement(m.hard, target.mask.hard);
        r += m.union_fraction();
        loss += manner == DistillManner::kMask ? lipn_loss(m.hard, p, p, target.mask.hard, h).total
                                               : attention_regression_loss(p, target.a);
    }
    const double n = static_cast<double>(bags.size());
    s.agreement = agree / n;
    s.r_tilde = r / n;
    s.loss = loss / n;
    return s;
}

LipnRun train_lipn(const std::vector<BagPair>& bags, const SplitSpec& split, const DminParams& frozen,
                   const DminHyper& dmin_hyper, const TrainConfig& cfg, const LipnHyper& hyper) {
    cfg.validate();
    hyper.validate();
    dmin_hyper.validate();
    split.validate(bags);
    const auto train = select_bags(bags, split.train_ids);
    const auto valid = select_bags(bags, split.valid_ids);
    const auto test = select_bags(bags, split.test_ids);
    if (train.empty()) throw UserError("training split is empty");
    if (static_cast<int>(train.front()->hi().cols()) != frozen.d_hi()) {
        throw UserError("DMIN checkpoint expects " + std::to_string(frozen.d_hi()) +
                        " high-resolution features, dataset has " + std::to_string(static_cast<int>(train.front()->hi().cols())));
    }

    LipnRun run;
    run.hyper = hyper;
    const LipnHyper& h = run.hyper;

    // The frozen network's eval-mode outputs are the distillation targets.
    std::vector<Matrix> target_hard(train.size()), target_attn(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) {
        const DminForward fw = dmin_forward_eval(frozen, train[i]->hi().values(), dmin_hyper);
        target_hard[i] = fw.mask.hard;
        target_attn[i] = fw.a;
    }

    LipnShape shape;
    shape.d_lo = static_cast<int>(train.front()->lo().cols());
    shape.hidden = cfg.lipn_hidden;
    LipnParams params = LipnParams::random(shape, derive_seed(cfg.seed, {fnv1a64("lipn-init")}));
    SgdMomentum<LipnParams> opt(params, cfg.momentum, cfg.weight_decay);

    const auto t0 = Clock::now();
    const long total_steps = static_cast<long>(cfg.epochs) * static_cast<long>(train.size());
    long step = 0;
    LipnParams best = params;
    double best_loss = std::numeric_limits<double>::infinity();
    int best_epoch = 0, since_best = 0;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng order_rng = make_rng(cfg.seed, {fnv1a64("lipn-order"), static_cast<std::uint64_t>(epoch)});
        LipnEpochRecord rec;
        rec.epoch = epoch;
        for (std::size_t i : permutation(train.size(), order_rng)) {
            const Matrix& lo = train[i]->lo().values();
            const LipnForward fw = lipn_forward_cached(lo, params);
            double loss = 0.0;
            Matrix d_p;
            const char* term = "agreement";
            if (cfg.manner == DistillManner::kMask) {
                const MaskMatrix m = lipn_binarize(fw.p, h.gamma);
                LipnLoss l = lipn_loss(m.hard, fw.p, fw.p, target_hard[i], h);
                if (!std::isfinite(l.rate)) term = "rate";
                loss = l.total;
                d_p = std::move(l.d_p);
            } else {
                term = "attention";
                loss = attention_regression_loss(fw.p, target_attn[i], &d_p);
            }
            if (!std::isfinite(loss)) {
                throw DivergenceError(term, "value " + std::to_string(loss) + " at epoch " + std::to_string(epoch) +
                                                ", bag " + train[i]->id());
            }
            LipnParams grads = lipn_backward(fw, params, lo, d_p);
            if (!all_finite(grads)) throw DivergenceError("gradient", "non-finite gradient at bag " + train[i]->id());
            clip_gradients(grads, cfg.clip_norm);
            opt.step(params, grads, cosine_lr(cfg.learning_rate, step++, total_steps));
            if (!all_finite(params)) throw DivergenceError("parameters", "non-finite update at bag " + train[i]->id());
            rec.train_loss += loss;
        }
        rec.train_loss /= static_cast<double>(train.size());
        if (!valid.empty()) {
            const AgreementSummary v = evaluate_lipn(valid, params, frozen, dmin_hyper, h, cfg.manner);
            rec.val_loss = v.loss;
            rec.val_agreement = v.agreement;
        }
        run.history.push_back(rec);
        const double crit = valid.empty() ? rec.train_loss : rec.val_loss;
        if (valid.empty() || crit < best_loss) {
            best = params;
            best_loss = crit;
            best_epoch = epoch;
            since_best = 0;
        } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
            break;
        }
    }
    run.metrics.train_seconds = seconds_since(t0);

    const auto t1 = Clock::now();
    FoldMetrics& m = run.metrics;
    m.fold = split.fold_index;
    m.best_epoch = best_epoch;
    const auto& held_out = test.empty() ? valid : test;
    if (!held_out.empty()) {
        const AgreementSummary a = evaluate_lipn(held_out, best, frozen, dmin_hyper, h, cfg.manner);
        m.agreement = a.agreement;
        m.r_hat = a.r_tilde;
        m.loss = a.loss;
        std::vector<double> scores;
        std::vector<int> labels, predictions;
        const StageCostModel no_costs;
        for (const BagPair* bag : held_out) {
            const InferenceResult r = infer_hdmil(*bag, frozen, best, dmin_hyper, no_costs);
            scores.push_back(r.score());
            labels.push_back(bag->label());
            predictions.push_back(r.predicted_label());
        }
        m.auc = safe_auc(scores, labels);
        m.acc = accuracy(predictions, labels);
    }
    m.eval_seconds = seconds_since(t1);
    run.params = std::move(best);
    return run;
}

}  // namespace milcascade

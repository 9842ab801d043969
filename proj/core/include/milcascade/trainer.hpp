// Copyright 2026 The milcascade Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "milcascade/datamodel.hpp"
#include "milcascade/dmin.hpp"
#include "milcascade/lipn.hpp"
#include "milcascade/metrics.hpp"

namespace milcascade {

enum class TrainStage { kDmin, kLipn };

/// What LIPN learns from the frozen DMIN.
enum class DistillManner {
    kMask,       // binary high-resolution masks, L1 agreement
    kAttention,  // min-max normalized attention scores, squared error
};

const char* to_string(TrainStage s) noexcept;
const char* to_string(DistillManner m) noexcept;
DistillManner parse_distill_manner(const std::string& name);

struct TrainConfig {
    TrainStage stage = TrainStage::kDmin;
    int epochs = 30;
    double learning_rate = 1e-3;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    /// Global gradient-norm clip per step; 0 disables clipping.
    double clip_norm = 5.0;
    std::uint64_t seed = 0;
    /// Epochs without a validation improvement before stopping; 0 never stops early.
    int patience = 0;

    // model shape
    int q_dim = 32;
    int attn_dim = 16;
    int lipn_hidden = 64;

    // ablation switches
    HeadKind head = HeadKind::kCka;
    int order = 12;
    bool self_distill = true;
    DistillManner manner = DistillManner::kMask;
    double r = 0.5;

    /// Stage-specific defaults (learning rate 1e-3 for DMIN, 1e-2 for LIPN).
    static TrainConfig defaults(TrainStage stage);

    /// Throws UserError when epochs < 1, learning_rate <= 0 or a switch is out of range.
    void validate() const;

    /// Stable key=value rendering; hashing it identifies the configuration.
    std::string canonical() const;
    std::uint64_t hash() const;
};

std::string hex_hash(std::uint64_t h);

/// DMIN hyper-parameters implied by a config: retention target from cfg.r and
/// the distillation weights zeroed when self-distillation is off.
DminHyper dmin_hyper_for(const TrainConfig& cfg, DminHyper base = {});
LipnHyper lipn_hyper_for(const TrainConfig& cfg, LipnHyper base = {});

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Which DMIN branch drives bag scores.
enum class EvalBranch { kStudent, kTeacher };

struct EvalSummary {
    double auc = kNaN;     // NaN when the set holds a single class
    double acc = kNaN;
    double loss = kNaN;    // mean eval-mode hybrid loss
    double r_hat = kNaN;   // mean union fraction of eval-mode masks
    double recall = kNaN;  // kept relevant / all relevant, NaN without ground truth
    std::vector<double> scores;
    std::vector<int> labels;
};

EvalSummary evaluate_dmin(const std::vector<const BagPair*>& bags, const DminParams& params, const DminHyper& h,
                          EvalBranch branch);

/// Kept relevant instances over all relevant instances.
double mask_recall(const MaskMatrix& mask, const std::vector<bool>& relevance);

struct EpochRecord {
    int epoch = 0;
    LossBreakdown train;  // mean over the epoch's optimization steps
    double val_auc = kNaN;
    double val_loss = kNaN;
    double val_r_hat = kNaN;
};

struct FoldMetrics {
    int fold = 0;
    double auc = kNaN;  // held-out (test split, or validation when test is empty)
    double acc = kNaN;
    double loss = kNaN;
    double r_hat = kNaN;
    double recall = kNaN;
    double agreement = kNaN;  // LIPN vs DMIN hard masks, when a LIPN is involved
    double sim_time = kNaN;   // mean simulated inference seconds per bag, when costed
    double val_auc = kNaN;
    double last_auc = kNaN;  // held-out metrics of the final epoch, exposes selection bias
    double last_acc = kNaN;
    int best_epoch = 0;
    double train_seconds = 0.0;  // wall-clock, never written to metric CSVs
    double eval_seconds = 0.0;
};

struct MetricsReport {
    std::vector<FoldMetrics> folds;

    MeanStd auc() const;
    MeanStd acc() const;
};

struct DminRun {
    DminParams params;
    DminHyper hyper;
    FoldMetrics metrics;
    std::vector<EpochRecord> history;
};

/// Trains DMIN on split.train_ids, one bag per step, selecting the epoch with
/// the best validation AUC (ties go to lower validation loss). Throws
/// DivergenceError naming the first non-finite loss term.
DminRun train_dmin(const std::vector<BagPair>& bags, const SplitSpec& split, const TrainConfig& cfg,
                   const DminHyper& hyper);

struct LipnEpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = kNaN;
    double val_agreement = kNaN;
};

struct LipnRun {
    LipnParams params;
    LipnHyper hyper;
    FoldMetrics metrics;  // agreement and r_hat on held-out bags
    std::vector<LipnEpochRecord> history;
};

/// Distills LIPN from the frozen DMIN's eval-mode outputs on the same split.
/// Keeps the epoch with the lowest validation loss. `frozen` is never written.
LipnRun train_lipn(const std::vector<BagPair>& bags, const SplitSpec& split, const DminParams& frozen,
                   const DminHyper& dmin_hyper, const TrainConfig& cfg, const LipnHyper& hyper);

/// Mean LIPN/DMIN hard-mask agreement and LIPN union fraction over `bags`.
struct AgreementSummary {
    double agreement = kNaN;
    double r_tilde = kNaN;
    double loss = kNaN;
};
AgreementSummary evaluate_lipn(const std::vector<const BagPair*>& bags, const LipnParams& lipn,
                               const DminParams& dmin, const DminHyper& dmin_hyper, const LipnHyper& h,
                               DistillManner manner);

}  // namespace milcascade

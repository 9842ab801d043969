// Copyright 2026 The milcascade Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "milcascade/infersim.hpp"
#include "milcascade/trainer.hpp"

namespace milcascade {

/// One configuration of an ablation grid. Arms with `with_lipn` are scored
/// through the full cascade (LIPN screening, then DMIN on kept instances).
struct AblationArm {
    std::string name;
    TrainConfig dmin = TrainConfig::defaults(TrainStage::kDmin);
    bool with_lipn = false;
    TrainConfig lipn = TrainConfig::defaults(TrainStage::kLipn);

    std::uint64_t hash() const;
};

/// Preset grids: "table3" (component study), "table4" (classifier heads),
/// "order" (Chebyshev order), "table5" (mask vs attention distillation) and
/// "fig4" (retention sweep). Shared settings come from the two base configs.
std::vector<AblationArm> ablation_preset(const std::string& name, const TrainConfig& dmin_base,
                                         const TrainConfig& lipn_base);

std::vector<std::string> ablation_preset_names();

struct AblationOptions {
    int folds = 5;
    std::uint64_t seed = 0;
    int jobs = 1;
    SplitFractions fractions;
    DminHyper dmin_hyper;
    LipnHyper lipn_hyper;
    StageCostModel costs;
    InferenceOptions inference;
};

struct AblationRow {
    std::string config;
    std::string config_hash;
    FoldMetrics metrics;
};

/// Runs every arm on every fold. Fold f uses the same split and the same
/// training seed for all arms, so rows are comparable across configurations.
/// Arms sharing a DMIN configuration share one DMIN training run per fold.
/// Rows are ordered by arm, then fold, regardless of `jobs`.
std::vector<AblationRow> run_ablation(const std::vector<BagPair>& bags, const std::vector<AblationArm>& grid,
                                      const AblationOptions& options);

/// Seed used for fold `fold` of a run keyed by `seed`.
std::uint64_t fold_seed(std::uint64_t seed, int fold);

}  // namespace milcascade

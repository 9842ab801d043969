// Copyright 2026 The milcascade Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "milcascade/datamodel.hpp"
#include "milcascade/dmin.hpp"
#include "milcascade/lipn.hpp"

namespace milcascade {

// Cascade inference: score every instance from low-resolution features, crop
// and featurize only the kept instances, classify with the student branch.
// Wall time is simulated with a fixed-plus-per-patch cost per stage.

enum class Stage { kScreen = 0, kCrop = 1, kFeature = 2, kClassify = 3 };
inline constexpr int kStages = 4;

const char* to_string(Stage s) noexcept;

enum class CountBasis {
    kAbsolute,  // per_patch is seconds per instance
    kFraction,  // per_patch is seconds per whole bag; counts are fractions of N
};

struct StageTimes {
    std::array<double, kStages> seconds{};
    double total() const noexcept { return seconds[0] + seconds[1] + seconds[2] + seconds[3]; }
    double operator[](Stage s) const noexcept { return seconds[static_cast<std::size_t>(s)]; }
};

struct StageCostModel {
    std::array<double, kStages> fixed{};
    std::array<double, kStages> per_patch{};
    CountBasis basis = CountBasis::kAbsolute;

    /// Throws UserError on a negative or non-finite entry.
    void validate() const;

    /// Screening (when enabled) touches all `total` instances; crop, feature
    /// extraction and classification touch `kept`.
    StageTimes simulate(bool screen, double total, double kept) const;
    /// Same, with counts taken from a bag of `n` instances of which `kept` survive.
    StageTimes simulate_bag(bool screen, int n, int kept) const;
};

/// Fits fixed and per-patch costs per stage from two operating points: all
/// instances (baseline) and a `keep_fraction` share (reduced), with N
/// normalized to 1. The screen stage only runs in the reduced pipeline and is
/// booked entirely as per-patch cost over all instances. Throws
/// CalibrationError when a fitted cost would be negative.
StageCostModel calibrate_costs(const std::array<double, kStages>& baseline, const std::array<double, kStages>& reduced,
                               double keep_fraction);

/// Stage times (screen, crop, feature, classify) of a reference slide workload
/// with and without pre-screening, keeping 58.4% of instances.
inline constexpr std::array<double, kStages> kReferenceBaselineTimes{0.0, 13.45, 10.00, 0.02};
inline constexpr std::array<double, kStages> kReferenceReducedTimes{0.01, 10.88, 5.84, 0.02};
inline constexpr double kReferenceKeepFraction = 0.584;

/// calibrate_costs applied to the reference workload.
StageCostModel reference_cost_model();

void save_cost_model(const StageCostModel& m, const std::filesystem::path& path);
StageCostModel load_cost_model(const std::filesystem::path& path);

/// How the student branch weights instances that survived pre-screening.
enum class KeptMaskPolicy {
    kLipnMasks,      // per-branch LIPN masks restricted to the kept set
    kAllOnes,        // every kept instance counts in both branches
    kDminRecompute,  // eval-mode DMIN masks recomputed on the kept set
};

struct InferenceOptions {
    KeptMaskPolicy policy = KeptMaskPolicy::kLipnMasks;
    /// DMIN-only inference: classify with the teacher branch instead of the
    /// student branch under deterministic masks.
    bool teacher_branch = false;
};

struct InferenceResult {
    Vector logits;
    std::vector<int> kept_indices;
    double r_realized = 0.0;      // |kept| / N
    double mask_retention = 0.0;  // union fraction of the masks that drove selection
    StageTimes stage_times;
    double simulated_time = 0.0;
    bool fallback_used = false;

    /// Softmax probability of class 1.
    double score() const;
    int predicted_label() const { return logits(1) > logits(0) ? 1 : 0; }
};

InferenceResult infer_hdmil(const BagPair& bag, const DminParams& dmin, const LipnParams& lipn, const DminHyper& h,
                            const StageCostModel& costs, const InferenceOptions& options = {});

InferenceResult infer_dmin_only(const BagPair& bag, const DminParams& dmin, const DminHyper& h,
                                const StageCostModel& costs, const InferenceOptions& options = {});

struct RetentionModel {
    double r = 0.0;
    DminParams dmin;
    LipnParams lipn;
    DminHyper hyper;
};

struct SweepRow {
    double r = 0.0;
    double hdmil_retention = 0.0;  // mean kept fraction after pre-screening
    double dmin_retention = 0.0;   // mean union fraction of DMIN eval masks
    double hdmil_auc = 0.0;
    double dmin_auc = 0.0;
    double hdmil_time = 0.0;  // mean simulated seconds per bag
    double dmin_time = 0.0;
};

std::vector<SweepRow> sweep_retention(const std::vector<const BagPair*>& bags,
                                      const std::vector<RetentionModel>& models, const StageCostModel& costs,
                                      const InferenceOptions& options = {});

}  // namespace milcascade

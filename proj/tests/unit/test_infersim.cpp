// Copyright 2026 The milcascade Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "milcascade/infersim.hpp"
#include "support.hpp"

namespace milcascade {
namespace {

using testing::Gen;

StageCostModel worked_example_model() {
    StageCostModel m;
    m.fixed = {0.01, 0.0, 0.0, 0.02};
    m.per_patch = {0.0, 0.002, 0.001, 0.0};
    return m;
}

TEST(CostModel, WorkedExample) {
    const StageCostModel m = worked_example_model();
    EXPECT_NEAR(m.simulate_bag(true, 1000, 400).total(), 1.23, 1e-12);
    EXPECT_NEAR(m.simulate_bag(false, 1000, 1000).total(), 3.02, 1e-12);
    EXPECT_NEAR(m.simulate_bag(true, 1000, 400)[Stage::kCrop], 0.8, 1e-12);
}

TEST(CostModel, MonotoneInKeptCount) {
    Gen g(1);
    for (int trial = 0; trial < 50; ++trial) {
        StageCostModel m;
        for (int s = 0; s < kStages; ++s) {
            m.fixed[static_cast<std::size_t>(s)] = std::uniform_real_distribution<double>(0, 2)(g);
            m.per_patch[static_cast<std::size_t>(s)] = std::uniform_real_distribution<double>(0, 0.1)(g);
        }
        m.basis = trial % 2 ? CountBasis::kFraction : CountBasis::kAbsolute;
        const int n = testing::uniform_int(g, 1, 500);
        double previous = -1.0;
        for (int kept = 0; kept <= n; kept += std::max(1, n / 17)) {
            const double t = m.simulate_bag(true, n, kept).total();
            EXPECT_GE(t, previous);
            previous = t;
        }
    }
}

TEST(CostModel, RejectsNegativeEntries) {
    StageCostModel m;
    m.per_patch[1] = -0.1;
    EXPECT_THROW(m.validate(), UserError);
}

TEST(Calibration, CropStageHasLargeFixedOverhead) {
    const StageCostModel m = reference_cost_model();
    EXPECT_NEAR(m.per_patch[1], (13.45 - 10.88) / (1.0 - 0.584), 1e-12);
    EXPECT_NEAR(m.per_patch[1], 6.18, 0.005);
    EXPECT_NEAR(m.fixed[1], 7.27, 0.005);
    EXPECT_NEAR(m.per_patch[2], 10.0, 1e-9);
    EXPECT_NEAR(m.fixed[2], 0.0, 1e-9);
}

TEST(Calibration, ReproducesBothOperatingPoints) {
    const StageCostModel m = reference_cost_model();
    const StageTimes base = m.simulate(false, 1.0, 1.0), reduced = m.simulate(true, 1.0, kReferenceKeepFraction);
    for (int s = 1; s < kStages; ++s) {
        EXPECT_NEAR(base.seconds[static_cast<std::size_t>(s)], kReferenceBaselineTimes[static_cast<std::size_t>(s)], 1e-9);
        EXPECT_NEAR(reduced.seconds[static_cast<std::size_t>(s)], kReferenceReducedTimes[static_cast<std::size_t>(s)], 1e-9);
    }
    EXPECT_NEAR(1.0 - reduced.total() / base.total(), 0.286, 0.02);
}

TEST(Calibration, InfeasibleInputsThrow) {
    std::array<double, kStages> base{0, 5, 5, 1}, reduced{0.1, 1, 3, 1};
    // Crop would need a negative fixed cost: 4 s saved by dropping 40% of patches.
    EXPECT_THROW(calibrate_costs(base, reduced, 0.6), CalibrationError);
    EXPECT_THROW(calibrate_costs(base, base, 1.0), CalibrationError);
    std::array<double, kStages> slower{0, 6, 6, 1};
    EXPECT_THROW(calibrate_costs(base, slower, 0.6), CalibrationError);
}

TEST(CostModelFile, JsonRoundTrip) {
    testing::TempDir dir("cost");
    const StageCostModel m = reference_cost_model();
    save_cost_model(m, dir / "costs.json");
    const StageCostModel back = load_cost_model(dir / "costs.json");
    EXPECT_EQ(back.fixed, m.fixed);
    EXPECT_EQ(back.per_patch, m.per_patch);
    EXPECT_EQ(back.basis, m.basis);
    EXPECT_THROW(load_cost_model(dir / "missing.json"), UserError);
}

struct Fixture {
    DminParams dmin;
    LipnParams lipn;
    DminHyper hyper;
    BagPair bag;
};

Fixture make_fixture(Gen& g, int n) {
    DminShape s;
    s.d_hi = 6;
    s.q_dim = 5;
    s.attn_dim = 4;
    s.order = 3;
    Fixture fx{DminParams::random(s, g()), LipnParams::random({3, 4}, g()), DminHyper{},
               BagPair("bag", FeatureMatrix(testing::normal_matrix(g, n, 6)), FeatureMatrix(testing::normal_matrix(g, n, 3)), 1)};
    return fx;
}

void keep_everything(LipnParams& p) {
    p.w2.setZero();
    p.b2.setConstant(30.0);
}

TEST(Inference, AllKeepScreenMatchesDminOnly) {
    Gen g(2);
    for (int trial = 0; trial < 10; ++trial) {
        Fixture fx = make_fixture(g, testing::uniform_int(g, 4, 30));
        keep_everything(fx.lipn);
        InferenceOptions recompute;
        recompute.policy = KeptMaskPolicy::kDminRecompute;
        const auto costs = reference_cost_model();
        const InferenceResult h = infer_hdmil(fx.bag, fx.dmin, fx.lipn, fx.hyper, costs, recompute);
        const InferenceResult d = infer_dmin_only(fx.bag, fx.dmin, fx.hyper, costs, recompute);
        EXPECT_LE((h.logits - d.logits).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_EQ(h.r_realized, 1.0);

        // With DMIN also keeping everything, the LIPN-mask policy agrees too.
        fx.hyper.gamma = 1e-300;
        const InferenceResult hl = infer_hdmil(fx.bag, fx.dmin, fx.lipn, fx.hyper, costs);
        const InferenceResult dl = infer_dmin_only(fx.bag, fx.dmin, fx.hyper, costs);
        EXPECT_LE((hl.logits - dl.logits).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Inference, EmptyScreenFallsBackToTopInstance) {
    Gen g(3);
    Fixture fx = make_fixture(g, 12);
    fx.lipn.b2.setConstant(-40.0);
    const InferenceResult r = infer_hdmil(fx.bag, fx.dmin, fx.lipn, fx.hyper, reference_cost_model());
    EXPECT_TRUE(r.fallback_used);
    EXPECT_GE(r.kept_indices.size(), 1u);
    EXPECT_LE(r.kept_indices.size(), 2u);
    EXPECT_TRUE(r.logits.allFinite());
}

TEST(Inference, TimeUsesKeptCount) {
    Gen g(4);
    Fixture fx = make_fixture(g, 20);
    const StageCostModel m = worked_example_model();
    const InferenceResult r = infer_hdmil(fx.bag, fx.dmin, fx.lipn, fx.hyper, m);
    const double kept = static_cast<double>(r.kept_indices.size());
    EXPECT_NEAR(r.simulated_time, 0.01 + kept * 0.003 + 0.02, 1e-12);
    EXPECT_NEAR(r.r_realized, kept / 20.0, 1e-15);
}

}  // namespace
}  // namespace milcascade

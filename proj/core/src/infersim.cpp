// Copyright 2026 The milcascade Authors
// SPDX-License-Identifier: Apache-2.0

#include "milcascade/infersim.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "milcascade/metrics.hpp"

namespace milcascade {

const char* to_string(Stage s) noexcept {
    switch (s) {
        case Stage::kScreen: return "screen";
        case Stage::kCrop: return "crop";
        case Stage::kFeature: return "feature";
        case Stage::kClassify: return "classify";
    }
    return "unknown";
}

void StageCostModel::validate() const {
    for (int s = 0; s < kStages; ++s) {
        const auto i = static_cast<std::size_t>(s);
        if (!(std::isfinite(fixed[i]) && fixed[i] >= 0.0 && std::isfinite(per_patch[i]) && per_patch[i] >= 0.0)) {
            throw UserError(std::string("cost model: stage '") + to_string(static_cast<Stage>(s)) +
                            "' has a negative or non-finite cost");
        }
    }
}

StageTimes StageCostModel::simulate(bool screen, double total, double kept) const {
    StageTimes t;
    if (screen) t.seconds[0] = fixed[0] + total * per_patch[0];
    for (std::size_t s = 1; s < kStages; ++s) t.seconds[s] = fixed[s] + kept * per_patch[s];
    return t;
}

StageTimes StageCostModel::simulate_bag(bool screen, int n, int kept) const {
    if (basis == CountBasis::kFraction) {
        return simulate(screen, 1.0, n > 0 ? static_cast<double>(kept) / n : 0.0);
    }
    return simulate(screen, n, kept);
}

StageCostModel calibrate_costs(const std::array<double, kStages>& baseline, const std::array<double, kStages>& reduced,
                               double keep) {
    if (!(keep > 0.0 && keep < 1.0)) throw CalibrationError("keep fraction must lie in (0, 1)");
    StageCostModel m;
    m.basis = CountBasis::kFraction;
    m.fixed[0] = 0.0;
    m.per_patch[0] = reduced[0];
    if (reduced[0] < 0.0) throw CalibrationError("negative screen-stage time");
    for (std::size_t s = 1; s < kStages; ++s) {
        const double pp = (baseline[s] - reduced[s]) / (1.0 - keep);
        const double fx = baseline[s] - pp;
        const char* name = to_string(static_cast<Stage>(s));
        if (pp < -1e-12) {
            throw CalibrationError(std::string("stage '") + name + "' is slower in the reduced pipeline");
        }
        if (fx < -1e-9) {
            throw CalibrationError(std::string("stage '") + name + "' needs a negative fixed cost (" +
                                   std::to_string(fx) + " s)");
        }
        m.per_patch[s] = std::max(pp, 0.0);
        m.fixed[s] = std::max(fx, 0.0);
    }
    return m;
}

StageCostModel reference_cost_model() {
    return calibrate_costs(kReferenceBaselineTimes, kReferenceReducedTimes, kReferenceKeepFraction);
}

void save_cost_model(const StageCostModel& m, const std::filesystem::path& path) {
    nlohmann::ordered_json j;
    j["basis"] = m.basis == CountBasis::kFraction ? "fraction" : "absolute";
    for (int s = 0; s < kStages; ++s) {
        const auto i = static_cast<std::size_t>(s);
        j["stages"][to_string(static_cast<Stage>(s))] = {{"fixed", m.fixed[i]}, {"per_patch", m.per_patch[i]}};
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw UserError("cannot write cost model '" + path.string() + "'");
    out << j.dump(2) << '\n';
}

StageCostModel load_cost_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw UserError("missing cost model '" + path.string() + "'");
    StageCostModel m;
    try {
        const auto j = nlohmann::json::parse(in);
        const std::string basis = j.value("basis", "absolute");
        if (basis == "fraction") m.basis = CountBasis::kFraction;
        else if (basis == "absolute") m.basis = CountBasis::kAbsolute;
        else throw UserError("unknown count basis '" + basis + "'");
        for (int s = 0; s < kStages; ++s) {
            const auto i = static_cast<std::size_t>(s);
            const auto& st = j.at("stages").at(to_string(static_cast<Stage>(s)));
            m.fixed[i] = st.at("fixed").get<double>();
            m.per_patch[i] = st.at("per_patch").get<double>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw UserError("cost model '" + path.string() + "': " + e.what());
    }
    m.validate();
    return m;
}

double InferenceResult::score() const { return softmax(logits)(1); }

namespace {

std::vector<int> union_indices(const Matrix& hard) {
    std::vector<int> kept;
    for (Eigen::Index j = 0; j < hard.rows(); ++j) {
        if (hard(j, 0) > 0.5 || hard(j, 1) > 0.5) kept.push_back(static_cast<int>(j));
    }
    return kept;
}

Matrix gather_rows(const Matrix& m, const std::vector<int>& rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
    return out;
}

}  // namespace

InferenceResult infer_hdmil(const BagPair& bag, const DminParams& dmin, const LipnParams& lipn, const DminHyper& h,
                            const StageCostModel& costs, const InferenceOptions& options) {
    InferenceResult res;
    const Matrix p = lipn_forward(bag.lo().values(), lipn);
    MaskMatrix m = lipn_binarize(p, h.gamma);
    for (int c = 0; c < kBranches; ++c) {
        if ((m.hard.col(c).array() > 0.5).count() == 0) {
            Eigen::Index best = 0;
            p.col(c).maxCoeff(&best);
            m.hard(best, c) = 1.0;
            res.fallback_used = true;
        }
    }
    res.kept_indices = union_indices(m.hard);
    const int n = bag.instances();
    const int kept = static_cast<int>(res.kept_indices.size());
    res.r_realized = static_cast<double>(kept) / n;
    res.mask_retention = res.r_realized;

    const Matrix x = gather_rows(bag.hi().values(), res.kept_indices);
    switch (options.policy) {
        case KeptMaskPolicy::kDminRecompute: {
            res.logits = dmin_forward_eval(dmin, x, h).logits_stu;
            break;
        }
        case KeptMaskPolicy::kAllOnes:
        case KeptMaskPolicy::kLipnMasks: {
            const Matrix f = project(x, dmin);
            const Matrix a = gated_attention(f, dmin);
            MaskMatrix kept_mask;
            kept_mask.soft = gather_rows(p, res.kept_indices);
            kept_mask.hard = options.policy == KeptMaskPolicy::kAllOnes ? Matrix::Ones(kept, kBranches).eval()
                                                                        : gather_rows(m.hard, res.kept_indices);
            res.logits = dual_branch_predict(student_aggregate(f, a, kept_mask).representation, dmin.heads);
            break;
        }
    }
    res.stage_times = costs.simulate_bag(true, n, kept);
    res.simulated_time = res.stage_times.total();
    return res;
}

InferenceResult infer_dmin_only(const BagPair& bag, const DminParams& dmin, const DminHyper& h,
                                const StageCostModel& costs, const InferenceOptions& options) {
    InferenceResult res;
    const DminForward fw = dmin_forward_eval(dmin, bag.hi().values(), h);
    res.logits = options.teacher_branch ? fw.logits_tea : fw.logits_stu;
    const int n = bag.instances();
    res.kept_indices.resize(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) res.kept_indices[static_cast<std::size_t>(j)] = j;
    res.r_realized = 1.0;
    res.mask_retention = fw.mask.union_fraction();
    res.fallback_used = fw.degenerate[0] || fw.degenerate[1];
    res.stage_times = costs.simulate_bag(false, n, n);
    res.simulated_time = res.stage_times.total();
    return res;
}

std::vector<SweepRow> sweep_retention(const std::vector<const BagPair*>& bags,
                                      const std::vector<RetentionModel>& models, const StageCostModel& costs,
                                      const InferenceOptions& options) {
    std::vector<SweepRow> rows;
    for (const auto& model : models) {
        SweepRow row;
        row.r = model.r;
        std::vector<double> s_h, s_d;
        std::vector<int> labels;
        for (const BagPair* bag : bags) {
            const InferenceResult rh = infer_hdmil(*bag, model.dmin, model.lipn, model.hyper, costs, options);
            const InferenceResult rd = infer_dmin_only(*bag, model.dmin, model.hyper, costs, options);
            row.hdmil_retention += rh.r_realized;
            row.dmin_retention += rd.mask_retention;
            row.hdmil_time += rh.simulated_time;
            row.dmin_time += rd.simulated_time;
            s_h.push_back(rh.score());
            s_d.push_back(rd.score());
            labels.push_back(bag->label());
        }
        const double nb = static_cast<double>(bags.size());
        row.hdmil_retention /= nb;
        row.dmin_retention /= nb;
        row.hdmil_time /= nb;
        row.dmin_time /= nb;
        row.hdmil_auc = compute_auc(s_h, labels);
        row.dmin_auc = compute_auc(s_d, labels);
        rows.push_back(row);
    }
    return rows;
}

}  // namespace milcascade

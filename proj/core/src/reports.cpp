// Copyright 2026 The milcascade Authors
// SPDX-License-Identifier: Apache-2.0

#include "milcascade/reports.hpp"

#include <charconv>
#include <cmath>
#include <fstream>

namespace milcascade {

namespace fs = std::filesystem;

std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

namespace {

std::ofstream open_csv(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw UserError("cannot write '" + path.string() + "'");
    return out;
}

template <class... T>
void row(std::ostream& out, const T&... fields) {
    bool first = true;
    const auto emit = [&](const auto& f) {
        if (!first) out << ',';
        first = false;
        if constexpr (std::is_floating_point_v<std::decay_t<decltype(f)>>) out << format_number(f);
        else out << f;
    };
    (emit(fields), ...);
    out << '\n';
}

}  // namespace

void write_metrics_csv(const fs::path& path, const std::vector<AblationRow>& rows) {
    auto out = open_csv(path);
    row(out, "config", "config_hash", "fold", "auc", "acc", "r_hat", "recall", "agreement", "sim_time", "val_auc",
        "last_auc", "last_acc", "best_epoch");
    for (const auto& r : rows) {
        const FoldMetrics& m = r.metrics;
        row(out, r.config, r.config_hash, m.fold, m.auc, m.acc, m.r_hat, m.recall, m.agreement, m.sim_time, m.val_auc,
            m.last_auc, m.last_acc, m.best_epoch);
    }
}

void write_timing_csv(const fs::path& path, const std::vector<AblationRow>& rows) {
    auto out = open_csv(path);
    row(out, "config", "config_hash", "fold", "train_seconds", "eval_seconds");
    for (const auto& r : rows) row(out, r.config, r.config_hash, r.metrics.fold, r.metrics.train_seconds, r.metrics.eval_seconds);
}

void write_dmin_history_csv(const fs::path& path, const std::vector<EpochRecord>& history) {
    auto out = open_csv(path);
    row(out, "epoch", "loss", "cls", "clu", "dis1", "dis2", "rate", "val_auc", "val_loss", "val_r_hat");
    for (const auto& e : history) {
        row(out, e.epoch, e.train.total, e.train.cls, e.train.clu, e.train.dis1, e.train.dis2, e.train.rate, e.val_auc,
            e.val_loss, e.val_r_hat);
    }
}

void write_lipn_history_csv(const fs::path& path, const std::vector<LipnEpochRecord>& history) {
    auto out = open_csv(path);
    row(out, "epoch", "loss", "val_loss", "val_agreement");
    for (const auto& e : history) row(out, e.epoch, e.train_loss, e.val_loss, e.val_agreement);
}

void write_inference_csv(const fs::path& path, const std::vector<BagInference>& rows) {
    auto out = open_csv(path);
    row(out, "id", "label", "logit0", "logit1", "score", "r_realized", "kept", "fallback", "t_screen", "t_crop",
        "t_feature", "t_classify", "t_total");
    for (const auto& b : rows) {
        const InferenceResult& r = b.result;
        const auto& s = r.stage_times.seconds;
        row(out, b.id, b.label, r.logits(0), r.logits(1), r.score(), r.r_realized, r.kept_indices.size(),
            r.fallback_used ? 1 : 0, s[0], s[1], s[2], s[3], r.simulated_time);
    }
}

void write_sweep_csv(const fs::path& path, const std::vector<SweepRow>& rows) {
    auto out = open_csv(path);
    row(out, "r", "hdmil_retention", "dmin_retention", "hdmil_auc", "dmin_auc", "hdmil_time", "dmin_time");
    for (const auto& r : rows) {
        row(out, r.r, r.hdmil_retention, r.dmin_retention, r.hdmil_auc, r.dmin_auc, r.hdmil_time, r.dmin_time);
    }
}

void write_attention_csv(const fs::path& path, const BagPair& bag, const DminForward& fw) {
    auto out = open_csv(path);
    row(out, "instance", "relevant", "a0", "a1", "w0", "w1", "soft0", "soft1", "keep0", "keep1");
    const auto& truth = bag.truth_relevance();
    for (int j = 0; j < bag.instances(); ++j) {
        const std::string rel = truth ? std::to_string((*truth)[static_cast<std::size_t>(j)] ? 1 : 0) : "";
        row(out, j, rel, fw.a(j, 0), fw.a(j, 1), fw.teacher.weights(j, 0), fw.teacher.weights(j, 1),
            fw.mask.soft(j, 0), fw.mask.soft(j, 1), static_cast<int>(fw.mask.hard(j, 0)),
            static_cast<int>(fw.mask.hard(j, 1)));
    }
}

void write_screening_csv(const fs::path& path, const BagPair& bag, const Matrix& scores, const MaskMatrix& mask) {
    auto out = open_csv(path);
    row(out, "instance", "relevant", "p0", "p1", "keep0", "keep1", "kept");
    const auto& truth = bag.truth_relevance();
    for (int j = 0; j < bag.instances(); ++j) {
        const std::string rel = truth ? std::to_string((*truth)[static_cast<std::size_t>(j)] ? 1 : 0) : "";
        row(out, j, rel, scores(j, 0), scores(j, 1), static_cast<int>(mask.hard(j, 0)),
            static_cast<int>(mask.hard(j, 1)), mask.kept(j) ? 1 : 0);
    }
}

}  // namespace milcascade

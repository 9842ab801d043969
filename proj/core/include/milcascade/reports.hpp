// Copyright 2026 The milcascade Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "milcascade/ablation.hpp"
#include "milcascade/infersim.hpp"
#include "milcascade/trainer.hpp"

namespace milcascade {

// CSV writers. Numbers are printed with round-trip precision so reruns with the
// same seed produce byte-identical files; wall-clock never goes into these.

/// Shortest decimal form that parses back to the same double; "nan" for NaN.
std::string format_number(double v);

void write_metrics_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows);
void write_timing_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows);
void write_dmin_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history);
void write_lipn_history_csv(const std::filesystem::path& path, const std::vector<LipnEpochRecord>& history);

struct BagInference {
    std::string id;
    int label = 0;
    InferenceResult result;
};

void write_inference_csv(const std::filesystem::path& path, const std::vector<BagInference>& rows);
void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows);

/// Per-instance attention scores and mask decisions of one bag, for plotting.
void write_attention_csv(const std::filesystem::path& path, const BagPair& bag, const DminForward& fw);

/// Per-instance LIPN scores and keep/discard decisions of one bag.
void write_screening_csv(const std::filesystem::path& path, const BagPair& bag, const Matrix& scores,
                         const MaskMatrix& mask);

}  // namespace milcascade

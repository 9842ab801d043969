// Copyright 2026 The milcascade Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include "milcascade/errors.hpp"

namespace milcascade {

/// ROC AUC as the Mann-Whitney statistic: the fraction of (positive,
/// negative) pairs ranked correctly, ties counting one half.
/// Throws NumericError when only one class is present.
double compute_auc(std::span<const double> scores, std::span<const int> labels);

/// Fraction of predictions equal to labels.
double accuracy(std::span<const int> predictions, std::span<const int> labels);

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation; 0 for a single value
};

MeanStd mean_std(std::span<const double> values);

}  // namespace milcascade

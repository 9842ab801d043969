// Copyright 2026 The milcascade Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include <gtest/gtest.h>

#include "milcascade/metrics.hpp"
#include "support.hpp"

namespace milcascade {
namespace {

double auc(std::vector<double> s, std::vector<int> y) { return compute_auc(s, y); }

// Every (positive, negative) pair, ties worth one half.
double pairwise_auc(const std::vector<double>& s, const std::vector<int>& y) {
    double wins = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (y[i] != 1) continue;
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (y[j] != 0) continue;
            wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
            pairs += 1.0;
        }
    }
    return wins / pairs;
}

TEST(Auc, WorkedExamples) {
    EXPECT_DOUBLE_EQ(auc({0.9, 0.1}, {1, 0}), 1.0);
    EXPECT_DOUBLE_EQ(auc({0.1, 0.9}, {1, 0}), 0.0);
    EXPECT_DOUBLE_EQ(auc({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0}), 0.5);
    EXPECT_DOUBLE_EQ(auc({0.8, 0.6, 0.4}, {1, 0, 1}), 0.5);
}

TEST(Auc, SingleClassThrows) {
    EXPECT_THROW(auc({0.1, 0.2}, {1, 1}), NumericError);
    EXPECT_THROW(auc({0.1, 0.2}, {0, 0}), NumericError);
    EXPECT_THROW(auc({0.1}, {0, 1}), UserError);
}

TEST(Auc, MatchesPairwiseOracleWithTies) {
    testing::Gen g(1);
    for (int trial = 0; trial < 300; ++trial) {
        const int n = testing::uniform_int(g, 2, 60);
        std::vector<double> s(static_cast<std::size_t>(n));
        std::vector<int> y(static_cast<std::size_t>(n));
        // Coarse score grid so ties are common.
        for (int i = 0; i < n; ++i) {
            s[static_cast<std::size_t>(i)] = testing::uniform_int(g, 0, 6) / 6.0;
            y[static_cast<std::size_t>(i)] = testing::uniform_int(g, 0, 1);
        }
        y[0] = 0;
        y[1] = 1;
        EXPECT_NEAR(compute_auc(s, y), pairwise_auc(s, y), 1e-12);
    }
}

TEST(Auc, InvariantUnderMonotoneTransform) {
    testing::Gen g(2);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = testing::uniform_int(g, 2, 40);
        std::vector<double> s(static_cast<std::size_t>(n)), t(static_cast<std::size_t>(n));
        std::vector<int> y(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            s[static_cast<std::size_t>(i)] = std::normal_distribution<double>()(g);
            t[static_cast<std::size_t>(i)] = std::exp(3.0 * s[static_cast<std::size_t>(i)]) - 7.0;
            y[static_cast<std::size_t>(i)] = i % 2;
        }
        EXPECT_DOUBLE_EQ(compute_auc(s, y), compute_auc(t, y));
    }
}

TEST(Accuracy, FractionCorrect) {
    const std::vector<int> p{1, 0, 1, 1}, y{1, 1, 1, 0};
    EXPECT_DOUBLE_EQ(accuracy(p, y), 0.5);
}

TEST(MeanStd, SampleStandardDeviation) {
    const std::vector<double> v{2, 4, 4, 4, 5, 5, 7, 9};
    const MeanStd m = mean_std(v);
    EXPECT_DOUBLE_EQ(m.mean, 5.0);
    EXPECT_NEAR(m.std, std::sqrt(32.0 / 7.0), 1e-14);
    const std::vector<double> one{3.0};
    EXPECT_EQ(mean_std(one).std, 0.0);
}

}  // namespace
}  // namespace milcascade

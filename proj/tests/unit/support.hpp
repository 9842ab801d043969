// Copyright 2026 The milcascade Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include <unistd.h>

#include "milcascade/datamodel.hpp"

namespace milcascade::testing {

using Gen = std::mt19937_64;

inline Matrix normal_matrix(Gen& g, Eigen::Index rows, Eigen::Index cols, double sigma = 1.0) {
    std::normal_distribution<double> nd(0.0, sigma);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(g);
    return m;
}

inline Matrix uniform_matrix(Gen& g, Eigen::Index rows, Eigen::Index cols, double lo, double hi) {
    std::uniform_real_distribution<double> ud(lo, hi);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = ud(g);
    return m;
}

inline int uniform_int(Gen& g, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(g); }

/// Central-difference gradient of `f` with respect to every entry of `x`.
inline Matrix numeric_gradient(const std::function<double()>& f, Matrix& x, double step = 1e-5) {
    Matrix g(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double saved = x.data()[i];
        x.data()[i] = saved + step;
        const double up = f();
        x.data()[i] = saved - step;
        const double down = f();
        x.data()[i] = saved;
        g.data()[i] = (up - down) / (2.0 * step);
    }
    return g;
}

/// Largest |a - n| / max(|a|, |n|, floor) over the entries.
inline double max_relative_error(const Matrix& analytic, const Matrix& numeric, double floor = 1e-3) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < analytic.size(); ++i) {
        const double a = analytic.data()[i], n = numeric.data()[i];
        worst = std::max(worst, std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor}));
    }
    return worst;
}

/// Scratch directory removed on destruction.
class TempDir {
  public:
    explicit TempDir(const std::string& tag)
        : path_(std::filesystem::temp_directory_path() /
                ("milcascade_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++))) {
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

  private:
    static int& counter() {
        static int c = 0;
        return c;
    }
    std::filesystem::path path_;
};

}  // namespace milcascade::testing

// Copyright 2026 The milcascade Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstring>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace milcascade {

// Parameter containers expose `visit(fn)` calling fn(name, Eigen::MatrixXd&)
// once per tensor in a fixed order. The helpers below flatten that into
// pointer lists so optimizers and gradient checks can zip structures of the
// same shape.

template <class P>
std::vector<Eigen::MatrixXd*> tensor_ptrs(P& p) {
    std::vector<Eigen::MatrixXd*> out;
    p.visit([&](const std::string&, Eigen::MatrixXd& m) { out.push_back(&m); });
    return out;
}

template <class P>
std::vector<std::pair<std::string, const Eigen::MatrixXd*>> named_tensors(const P& p) {
    std::vector<std::pair<std::string, const Eigen::MatrixXd*>> out;
    p.visit([&](const std::string& name, const Eigen::MatrixXd& m) { out.emplace_back(name, &m); });
    return out;
}

template <class P>
std::size_t scalar_count(const P& p) {
    std::size_t n = 0;
    p.visit([&](const std::string&, const Eigen::MatrixXd& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
}

template <class P>
void set_zero(P& p) {
    p.visit([](const std::string&, Eigen::MatrixXd& m) { m.setZero(); });
}

template <class P>
P zeros_like(const P& p) {
    P out = p;
    set_zero(out);
    return out;
}

template <class P>
bool all_finite(const P& p) {
    bool ok = true;
    p.visit([&](const std::string&, const Eigen::MatrixXd& m) { ok = ok && m.allFinite(); });
    return ok;
}

/// Bitwise equality of every tensor.
template <class P>
bool identical(const P& a, const P& b) {
    auto ta = named_tensors(a);
    auto tb = named_tensors(b);
    if (ta.size() != tb.size()) return false;
    for (std::size_t i = 0; i < ta.size(); ++i) {
        const auto& x = *ta[i].second;
        const auto& y = *tb[i].second;
        if (x.rows() != y.rows() || x.cols() != y.cols()) return false;
        for (Eigen::Index k = 0; k < x.size(); ++k) {
            const double u = x.data()[k], v = y.data()[k];
            if (std::memcmp(&u, &v, sizeof(double)) != 0) return false;
        }
    }
    return true;
}

}  // namespace milcascade

// Copyright 2026 The milcascade Authors
// SPDX-License-Identifier: Apache-2.0

#include "milcascade/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "milcascade/rng.hpp"

namespace milcascade {

namespace {

struct Geometry {
    Vector class_axis;     // u
    Vector salience_axis;  // v, orthogonal to u
    Matrix projection;     // d_hi x d_lo
};

Vector gaussian_vector(Rng& rng, int n) {
    std::normal_distribution<double> nd(0.0, 1.0);
    Vector v(n);
    for (int i = 0; i < n; ++i) v(i) = nd(rng);
    return v;
}

Geometry make_geometry(const SynthConfig& cfg) {
    Rng rng = make_rng(cfg.seed, {0x6e0ULL});
    Geometry g;
    g.class_axis = gaussian_vector(rng, cfg.d_hi).normalized();
    Vector v = gaussian_vector(rng, cfg.d_hi);
    v -= v.dot(g.class_axis) * g.class_axis;
    g.salience_axis = v.normalized();
    std::normal_distribution<double> nd(0.0, 1.0 / std::sqrt(static_cast<double>(cfg.d_hi)));
    g.projection.resize(cfg.d_hi, cfg.d_lo);
    for (int i = 0; i < cfg.d_hi; ++i)
        for (int j = 0; j < cfg.d_lo; ++j) g.projection(i, j) = nd(rng);
    return g;
}

double inverse_normal_cdf(double p) {
    double lo = -40.0, hi = 40.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (0.5 * std::erfc(-mid / std::sqrt(2.0)) < p) lo = mid;
        else hi = mid;
    }
    return 0.5 * (lo + hi);
}

/// Mahalanobis separation of relevant vs background instances in lo space,
/// under the pooled covariance for noise scale `eta`.
double lo_separation(const SynthConfig& cfg, const Geometry& g, double eta) {
    const Matrix& p = g.projection;
    const Vector delta = cfg.salience * (p.transpose() * g.salience_axis);
    const Vector spread = (cfg.class_separation / 2.0) * (p.transpose() * g.class_axis);
    Matrix cov = cfg.noise_sigma * cfg.noise_sigma * (p.transpose() * p);
    cov += cfg.relevant_fraction * spread * spread.transpose();
    cov.diagonal().array() += eta * eta;
    const Vector w = cov.ldlt().solve(delta);
    return std::sqrt(std::max(0.0, delta.dot(w)));
}

double solve_lo_noise(const SynthConfig& cfg, const Geometry& g) {
    if (cfg.lo_fidelity >= 1.0) return 0.0;
    const double target = 2.0 * inverse_normal_cdf(cfg.lo_fidelity);
    if (lo_separation(cfg, g, 0.0) <= target) return 0.0;
    double lo = 0.0, hi = 1.0;
    while (lo_separation(cfg, g, hi) > target) hi *= 2.0;
    for (int it = 0; it < 100; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (lo_separation(cfg, g, mid) > target) lo = mid;
        else hi = mid;
    }
    return 0.5 * (lo + hi);
}

bool uninformative_lo(const SynthConfig& cfg) { return cfg.lo_fidelity <= 0.5; }

}  // namespace

void SynthConfig::validate() const {
    auto fail = [](const char* what) { throw UserError(std::string("synth config: ") + what); };
    if (n_bags < 1) fail("n_bags must be >= 1");
    if (min_instances < 8) fail("min_instances must be >= 8");
    if (max_instances < min_instances) fail("max_instances must be >= min_instances");
    if (d_hi < 2) fail("d_hi must be >= 2");
    if (d_lo < 1) fail("d_lo must be >= 1");
    if (!(relevant_fraction > 0.0 && relevant_fraction < 1.0)) fail("relevant_fraction must lie in (0, 1)");
    if (!(class_separation >= 0.0)) fail("class_separation must be >= 0");
    if (!(lo_fidelity >= 0.0 && lo_fidelity <= 1.0)) fail("lo_fidelity must lie in [0, 1]");
    if (!(noise_sigma > 0.0)) fail("noise_sigma must be > 0");
    if (!(salience >= 0.0)) fail("salience must be >= 0");
    if (!(extra_background_fraction >= 0.0)) fail("extra_background_fraction must be >= 0");
}

int relevant_count(const SynthConfig& cfg, int n) {
    return static_cast<int>(std::lround(cfg.relevant_fraction * n));
}

double lo_noise_scale(const SynthConfig& cfg) {
    cfg.validate();
    if (uninformative_lo(cfg)) return 0.0;
    return solve_lo_noise(cfg, make_geometry(cfg));
}

std::vector<BagPair> generate(const SynthConfig& cfg) {
    cfg.validate();
    const Geometry geo = make_geometry(cfg);
    const bool uninformative = uninformative_lo(cfg);
    const double eta = uninformative ? 0.0 : solve_lo_noise(cfg, geo);
    // Scale of pure-noise lo features when they carry no relevance signal.
    const double lo_scale =
        cfg.noise_sigma * std::sqrt((geo.projection.transpose() * geo.projection).diagonal().mean());

    std::vector<BagPair> bags;
    bags.reserve(static_cast<std::size_t>(cfg.n_bags));
    for (int b = 0; b < cfg.n_bags; ++b) {
        Rng rng = make_rng(cfg.seed, {0xba9ULL, static_cast<std::uint64_t>(b)});
        std::normal_distribution<double> nd(0.0, 1.0);
        const int label = b % 2;
        const int n_base = std::uniform_int_distribution<int>(cfg.min_instances, cfg.max_instances)(rng);
        const int n_rel = relevant_count(cfg, n_base);
        const int n_extra = static_cast<int>(std::lround(cfg.extra_background_fraction * n_base));
        const int n = n_base + n_extra;

        std::vector<bool> relevant(static_cast<std::size_t>(n), false);
        std::fill(relevant.begin(), relevant.begin() + n_rel, true);
        std::shuffle(relevant.begin(), relevant.end(), rng);

        const double sign = label == 1 ? 1.0 : -1.0;
        const Vector signal_mean =
            cfg.salience * geo.salience_axis + sign * (cfg.class_separation / 2.0) * geo.class_axis;

        Matrix hi(n, cfg.d_hi);
        for (int j = 0; j < n; ++j) {
            for (int d = 0; d < cfg.d_hi; ++d) hi(j, d) = cfg.noise_sigma * nd(rng);
            if (relevant[static_cast<std::size_t>(j)]) hi.row(j) += signal_mean.transpose();
        }
        Matrix lo(n, cfg.d_lo);
        if (uninformative) {
            for (int j = 0; j < n; ++j)
                for (int d = 0; d < cfg.d_lo; ++d) lo(j, d) = lo_scale * nd(rng);
        } else {
            lo = hi * geo.projection;
            for (int j = 0; j < n; ++j)
                for (int d = 0; d < cfg.d_lo; ++d) lo(j, d) += eta * nd(rng);
        }

        char id[32];
        std::snprintf(id, sizeof id, "bag_%05d", b);
        bags.emplace_back(id, FeatureMatrix(std::move(hi)), FeatureMatrix(std::move(lo)), label, std::move(relevant));
    }
    return bags;
}

}  // namespace milcascade

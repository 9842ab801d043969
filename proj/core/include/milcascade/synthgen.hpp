// Copyright 2026 The milcascade Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "milcascade/datamodel.hpp"

namespace milcascade {

/// Synthetic paired-resolution bags with known instance relevance.
///
/// Geometry in the high-resolution feature space, with orthonormal random
/// directions u (class axis) and v (salience axis):
///   background instance:  N(0, sigma^2 I), identical for both classes
///   class-c signal:       N(salience * v + s_c * (separation / 2) * u, sigma^2 I),
///                         s_0 = -1, s_1 = +1
/// Low-resolution features are lo = hi * P + eta * noise with a fixed random
/// projection P; eta is solved so the best linear relevance probe on lo
/// features has accuracy close to `lo_fidelity`.
struct SynthConfig {
    int n_bags = 200;
    int min_instances = 40;
    int max_instances = 80;
    int d_hi = 64;
    int d_lo = 32;
    double relevant_fraction = 0.3;
    double class_separation = 3.0;
    double lo_fidelity = 0.95;
    double noise_sigma = 0.5;
    /// Offset of all signal instances from the background mean along v.
    double salience = 3.0;
    /// Extra background instances appended per bag, as a fraction of the base
    /// instance count (rounded). Used for the denoising experiments.
    double extra_background_fraction = 0.0;
    std::uint64_t seed = 0;

    /// Throws UserError on an out-of-range field.
    void validate() const;
};

/// Number of relevant instances in a bag with `n` base instances.
int relevant_count(const SynthConfig& cfg, int n);

/// Low-resolution noise scale the generator uses for this config.
double lo_noise_scale(const SynthConfig& cfg);

/// Deterministic per seed; bag i is drawn from a stream keyed by (seed, i).
/// Labels alternate 0, 1, 0, ... so classes are balanced.
std::vector<BagPair> generate(const SynthConfig& cfg);

}  // namespace milcascade

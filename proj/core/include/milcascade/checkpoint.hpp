// Copyright 2026 The milcascade Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>

#include "milcascade/dmin.hpp"
#include "milcascade/lipn.hpp"

namespace milcascade {

// Versioned binary checkpoints. Layout (little-endian):
//   magic "HDCK" | version u16 | kind u8 (1 = DMIN, 2 = LIPN)
//   hyper-parameters (f64 fields, then i32 fields)
//   shape (i32 fields)
//   tensor count u32, then per tensor: name length u16, name bytes,
//   rows u32, cols u32, rows*cols f64 column-major
// Values are stored at full double precision so a save/load round trip is
// bitwise exact.

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct DminCheckpoint {
    DminParams params;
    DminHyper hyper;
    DminShape shape;
};

struct LipnCheckpoint {
    LipnParams params;
    LipnHyper hyper;
};

DminShape shape_of(const DminParams& p);

void save_dmin_checkpoint(const std::filesystem::path& path, const DminParams& params, const DminHyper& hyper);
DminCheckpoint load_dmin_checkpoint(const std::filesystem::path& path);

void save_lipn_checkpoint(const std::filesystem::path& path, const LipnParams& params, const LipnHyper& hyper);
LipnCheckpoint load_lipn_checkpoint(const std::filesystem::path& path);

}  // namespace milcascade

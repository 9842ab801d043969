// Copyright 2026 The milcascade Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

namespace milcascade {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace milcascade

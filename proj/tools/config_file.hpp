// Copyright 2026 The milcascade Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

namespace milcascade::cli {

/// Expands `--config FILE` in a subcommand's argument list. The file is a flat
/// `key = value` document (lists as `[a, b]`); every entry becomes
/// `--key=value` ahead of the explicit arguments, so explicit arguments win.
/// Entries whose option also appears explicitly are dropped, which keeps list
/// options from merging.
///
/// `args` excludes the program name. Returns the expanded list and the config
/// path (empty when none was given). Throws UserError when the file is
/// missing or malformed.
struct ExpandedArgs {
    std::vector<std::string> args;
    std::string config_path;
};

ExpandedArgs expand_config(const std::vector<std::string>& args);

}  // namespace milcascade::cli

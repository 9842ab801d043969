// Copyright 2026 The milcascade Authors
// SPDX-License-Identifier: Apache-2.0

#include "config_file.hpp"

#include <fstream>
#include <set>

#include <CLI11.hpp>

#include "milcascade/errors.hpp"

namespace milcascade::cli {

namespace {

std::string option_name(const std::string& token) {
    if (token.rfind("--", 0) != 0) return {};
    std::string name = token.substr(2);
    if (const auto eq = name.find('='); eq != std::string::npos) name.resize(eq);
    if (name.rfind("no-", 0) == 0) name = name.substr(3);
    return name;
}

}  // namespace

ExpandedArgs expand_config(const std::vector<std::string>& args) {
    ExpandedArgs out;
    if (args.empty()) return out;

    std::vector<std::string> rest;
    rest.push_back(args.front());  // subcommand name
    for (std::size_t i = 1; i < args.size(); ++i) {
        const std::string& a = args[i];
        if (a == "--config") {
            if (i + 1 >= args.size()) throw UserError("--config needs a file argument");
            out.config_path = args[++i];
        } else if (a.rfind("--config=", 0) == 0) {
            out.config_path = a.substr(9);
        } else {
            rest.push_back(a);
        }
    }
    if (out.config_path.empty()) {
        out.args = std::move(rest);
        return out;
    }

    std::ifstream in(out.config_path);
    if (!in) throw UserError("missing config file '" + out.config_path + "'");
    std::vector<CLI::ConfigItem> items;
    try {
        items = CLI::ConfigTOML().from_config(in);
    } catch (const CLI::ParseError& e) {
        throw UserError("config file '" + out.config_path + "': " + e.what());
    }

    std::set<std::string> explicit_names;
    for (std::size_t i = 1; i < rest.size(); ++i) explicit_names.insert(option_name(rest[i]));

    out.args.push_back(rest.front());
    for (const auto& item : items) {
        if (!item.parents.empty()) {
            throw UserError("config file '" + out.config_path + "': sections are not supported (key '" + item.name +
                            "')");
        }
        if (explicit_names.count(item.name) != 0) continue;
        std::string joined;
        for (const auto& v : item.inputs) {
            if (!joined.empty()) joined += ',';
            joined += v;
        }
        out.args.push_back("--" + item.name + "=" + joined);
    }
    out.args.insert(out.args.end(), rest.begin() + 1, rest.end());
    return out;
}

}  // namespace milcascade::cli

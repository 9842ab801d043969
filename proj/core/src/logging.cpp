// Copyright 2026 The milcascade Authors
// SPDX-License-Identifier: Apache-2.0

#include "milcascade/logging.hpp"

#include <iostream>
#include <mutex>

namespace milcascade {

namespace {

std::mutex& sink_mutex() {
    static std::mutex m;
    return m;
}

LogSink& sink() {
    static LogSink s = [](LogLevel level, std::string_view msg) {
        if (level == LogLevel::kDebug) return;
        std::cerr << (level == LogLevel::kWarning ? "[warn] " : "[info] ") << msg << '\n';
    };
    return s;
}

}  // namespace

void set_log_sink(LogSink s) {
    std::lock_guard lock(sink_mutex());
    sink() = std::move(s);
}

void log_message(LogLevel level, std::string_view message) {
    std::lock_guard lock(sink_mutex());
    if (sink()) sink()(level, message);
}

}  // namespace milcascade

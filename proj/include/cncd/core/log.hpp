#pragma once

#include <cstdlib>
#include <iostream>
#include <sstream>
#include <string>
#include <string_view>

#include "cncd/core/errors.hpp"

namespace cncd::log {

enum class Level { Quiet = 0, Error = 1, Warn = 2, Info = 3, Debug = 4 };

inline constexpr const char* kEnvVar = "CNCD_LOG";

inline Level parse_level(std::string_view s) {
    if (s == "quiet" || s == "off") return Level::Quiet;
    if (s == "error") return Level::Error;
    if (s == "warn" || s == "warning") return Level::Warn;
    if (s == "info") return Level::Info;
    if (s == "debug") return Level::Debug;
    throw ParameterError("unknown log level '" + std::string(s) + "' (quiet|error|warn|info|debug)");
}

/// Process-wide threshold, read once from CNCD_LOG (default warn). An unknown
/// value falls back to warn with a one-time complaint.
inline Level& threshold() {
    static Level level = [] {
        const char* v = std::getenv(kEnvVar);
        if (!v || !*v) return Level::Warn;
        try {
            return parse_level(v);
        } catch (const ParameterError& e) {
            std::cerr << "[warn] " << e.what() << "\n";
            return Level::Warn;
        }
    }();
    return level;
}

inline bool enabled(Level l) { return static_cast<int>(l) <= static_cast<int>(threshold()); }

template <class... Args>
void write(Level l, const char* tag, const Args&... args) {
    if (!enabled(l)) return;
    std::ostringstream os;
    os << '[' << tag << "] ";
    (os << ... << args);
    os << '\n';
    std::cerr << os.str();
}

template <class... Args>
void error(const Args&... a) { write(Level::Error, "error", a...); }
template <class... Args>
void warn(const Args&... a) { write(Level::Warn, "warn", a...); }
template <class... Args>
void info(const Args&... a) { write(Level::Info, "info", a...); }
template <class... Args>
void debug(const Args&... a) { write(Level::Debug, "debug", a...); }

}  // namespace cncd::log

#pragma once

#include <cstdio>
#include <functional>
#include <string>
#include <string_view>

#include <fmt/format.h>

namespace cct {

// Warnings go through a replaceable sink so tests can count them.
inline std::function<void(std::string_view)>& warning_sink() {
    static std::function<void(std::string_view)> sink = [](std::string_view msg) {
        fmt::print(stderr, "warning: {}\n", msg);
    };
    return sink;
}

inline void warn(std::string_view msg) { warning_sink()(msg); }

inline bool& info_enabled() {
    static bool on = true;
    return on;
}

template <class... Args>
void info(fmt::format_string<Args...> f, Args&&... args) {
    if (info_enabled()) fmt::print(stderr, "{}\n", fmt::format(f, std::forward<Args>(args)...));
}

}  // namespace cct

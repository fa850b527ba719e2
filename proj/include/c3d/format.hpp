#pragma once

#include <charconv>
#include <cmath>
#include <string>

namespace c3d {

/// Shortest decimal form that parses back to the same double; "nan" for NaN.
inline std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

}  // namespace c3d

#pragma once

#include <charconv>
#include <string>

namespace catuda {

/// Shortest round-trip decimal form. Locale-independent, so CSV output is
/// byte-stable across runs.
inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

}  // namespace catuda

#pragma once

#include <cmath>
#include <cstdio>
#include <string>

namespace graftbench {

/// Round to one decimal, ties away from zero (used for corpus-size reports).
inline double round_half_up_1dp(double x) {
    return std::floor(x * 10.0 + 0.5) / 10.0;
}

/// Round to one decimal, ties to even (used for score reports). Relies on
/// the default FE_TONEAREST rounding mode.
inline double round_half_even_1dp(double x) {
    return std::nearbyint(x * 10.0) / 10.0;
}

/// Formats with exactly one decimal digit.
inline std::string format_1dp(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.1f", x);
    return buf;
}

}  // namespace graftbench

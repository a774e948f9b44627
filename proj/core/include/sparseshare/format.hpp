#pragma once

#include <cstdio>
#include <string>

namespace sparseshare {

/// Six significant digits, locale-independent; used by every CSV/JSON writer.
inline std::string format_number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

}  // namespace sparseshare

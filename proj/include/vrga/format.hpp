#pragma once

#include <cstdio>
#include <optional>
#include <string>

namespace vrga {

// Shortest "%.9g" rendering used by every text table.
inline std::string format_g9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline std::string format_g9(const std::optional<double>& v) { return v ? format_g9(*v) : std::string(); }

}  // namespace vrga

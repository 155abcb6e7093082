#pragma once

#include <cstdio>
#include <ostream>
#include <string>

namespace mobility {

/// Shortest round-trippable-enough text for CSV output; '.' decimal
/// regardless of locale.
inline std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", x);
  return buf;
}

}  // namespace mobility

#pragma once

#include <cstdio>
#include <string>

namespace fedalign {

// Fixed textual form for reals in every CSV the library writes: "%.17g",
// which round-trips any double exactly.
inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace fedalign

#pragma once

#include <cstdio>
#include <string>

namespace distillbound {

// 17 significant digits: enough to round-trip any double exactly.
inline std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace distillbound

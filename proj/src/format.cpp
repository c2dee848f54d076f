#include "spacegraph/format.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>

#include "spacegraph/errors.hpp"

namespace spacegraph {

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_real(const std::string& s) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE)
    throw ConfigError("not a real number: '" + s + "'");
  return v;
}

}  // namespace spacegraph

#pragma once

#include <string>

namespace spacegraph {

// 17 significant digits: enough for an exact double round trip.
std::string format_real(double v);
double parse_real(const std::string& s);

}  // namespace spacegraph

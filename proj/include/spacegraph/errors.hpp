#pragma once

#include <stdexcept>
#include <string>

namespace spacegraph {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

#define SPACEGRAPH_ERROR(Name)                    \
  struct Name : Error {                           \
    explicit Name(const std::string& what)        \
        : Error(std::string(#Name ": ") + what) {} \
  };

SPACEGRAPH_ERROR(ChartDomainError)
SPACEGRAPH_ERROR(DegeneratePlaneError)
SPACEGRAPH_ERROR(InjectivityRadiusError)
SPACEGRAPH_ERROR(PoleRowError)
SPACEGRAPH_ERROR(NotSpacelikeError)
SPACEGRAPH_ERROR(SpacelikeViolation)
SPACEGRAPH_ERROR(HypothesisError)
SPACEGRAPH_ERROR(NonConvergence)
SPACEGRAPH_ERROR(NonUniformSamplingError)
SPACEGRAPH_ERROR(InsufficientDecayError)
SPACEGRAPH_ERROR(ConfigError)

#undef SPACEGRAPH_ERROR

}  // namespace spacegraph

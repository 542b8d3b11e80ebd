#pragma once

#include <stdexcept>
#include <string>

namespace voltreg {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParseError : Error { using Error::Error; };
struct TopologyError : Error { using Error::Error; };
struct PhaseError : Error { using Error::Error; };
struct UnknownNodeError : Error { using Error::Error; };
struct DimensionError : Error { using Error::Error; };
struct NoConvergenceError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct CurvatureError : Error { using Error::Error; };
struct InfeasibleClusterError : Error { using Error::Error; };
struct ScopeError : Error { using Error::Error; };
struct MissingMessageError : Error { using Error::Error; };
struct BarrierTimeoutError : Error { using Error::Error; };

}  // namespace voltreg

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace dskd {

/// Base of every error thrown by the library. `kind()` names the contract
/// that was violated so callers (the CLI in particular) can map it to an
/// exit status without string matching.
class Error : public std::runtime_error {
 public:
  enum class Kind {
    Config,          // invalid configuration value
    Input,           // shape / argument mismatch at an API boundary
    Load,            // missing or corrupt weights / checkpoint file
    State,           // object used before it was ready (e.g. unfitted)
    Contract,        // precondition between two valid objects violated
    UndefinedMetric, // metric not defined for the given data
    Data,            // dataset layout / integrity / format problem
    Divergence,      // non-finite loss during training
    Io,              // filesystem write failure
  };

  Error(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

#define DSKD_DEFINE_ERROR(Name, K)                                    \
  class Name : public Error {                                         \
   public:                                                            \
    explicit Name(const std::string& what) : Error(Kind::K, what) {}  \
  };

DSKD_DEFINE_ERROR(ConfigError, Config)
DSKD_DEFINE_ERROR(InputError, Input)
DSKD_DEFINE_ERROR(LoadError, Load)
DSKD_DEFINE_ERROR(StateError, State)
DSKD_DEFINE_ERROR(ContractError, Contract)
DSKD_DEFINE_ERROR(UndefinedMetricError, UndefinedMetric)
DSKD_DEFINE_ERROR(DataError, Data)
DSKD_DEFINE_ERROR(DivergenceError, Divergence)
DSKD_DEFINE_ERROR(IoError, Io)

#undef DSKD_DEFINE_ERROR

}  // namespace dskd

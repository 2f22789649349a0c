#pragma once

#include <stdexcept>
#include <string>

namespace qf {

/// Broad failure category; the CLI maps these onto process exit codes.
enum class ErrorKind {
  Config,     ///< invalid user input or configuration
  Simulator,  ///< simulator failure (process exit, replay exhaustion, timeout)
  Numerical,  ///< ill-conditioning, rank deficiency, failed optimization
  Domain,     ///< argument outside the domain of an operation
  Io,         ///< file read/write problems
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define QF_DEFINE_ERROR(Name, Kind)                                         \
  class Name : public Error {                                               \
   public:                                                                  \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

QF_DEFINE_ERROR(ConfigError, Config)
QF_DEFINE_ERROR(DomainError, Domain)
QF_DEFINE_ERROR(GridMismatchError, Domain)
QF_DEFINE_ERROR(EmptySampleError, Domain)
QF_DEFINE_ERROR(DivisionByZeroError, Numerical)
QF_DEFINE_ERROR(RankError, Numerical)
QF_DEFINE_ERROR(IllConditionedError, Numerical)
QF_DEFINE_ERROR(FitError, Numerical)
QF_DEFINE_ERROR(DuplicateInputError, Config)
QF_DEFINE_ERROR(DegenerateObjectiveError, Numerical)
QF_DEFINE_ERROR(SimulatorError, Simulator)
QF_DEFINE_ERROR(ReplayError, Simulator)
QF_DEFINE_ERROR(IoError, Io)

#undef QF_DEFINE_ERROR

}  // namespace qf

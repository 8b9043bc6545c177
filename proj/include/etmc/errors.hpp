#pragma once

#include <stdexcept>
#include <string>

namespace etmc {

// Base class for everything thrown by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Input violates a structural precondition: malformed matrix, bad state
// index, parameter out of range.
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error(what) {}
};

// The requested observation pair can never occur (the second observation
// state is unreachable from the first).
class ImpossiblePairError : public Error {
 public:
  explicit ImpossiblePairError(const std::string& what) : Error(what) {}
};

// A Monte Carlo run could not produce the requested estimate (acceptance
// too low, or a trajectory exceeded the step cap).
class SimulationError : public Error {
 public:
  explicit SimulationError(const std::string& what) : Error(what) {}
};

}  // namespace etmc

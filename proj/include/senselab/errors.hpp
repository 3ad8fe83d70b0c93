#pragma once

#include <stdexcept>
#include <string>

namespace senselab {

struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ParameterError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A theorem hypothesis (RIP threshold, tau range, ...) is violated by the inputs.
struct HypothesisError : std::domain_error {
  using std::domain_error::domain_error;
};

struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Iterative routine failed to reach its tolerance within the iteration cap.
struct ConvergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace senselab

#pragma once

#include <stdexcept>
#include <string>

namespace tbp {

struct ParameterError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigurationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EstimationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace tbp

#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dpsep {

using Signal = std::vector<double>;
using SignalView = std::span<const double>;

// Raised when an intermediate quantity becomes NaN/inf during sampling or
// training. The message carries the step diagnostics.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dpsep

#pragma once

#include <stdexcept>
#include <string>

namespace distillbound {

// Bad user input: malformed config files, missing keys, invalid values.
// The CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// A numerical procedure failed (divergence, non-convergence, exhausted
// retries). The CLI maps this to exit code 3.
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

// Power iteration ran out of iterations; carries the last estimate so a
// caller that can live with a loose value may still use it.
struct ConvergenceError : NumericalError {
  double last_estimate;
  ConvergenceError(const std::string& what, double estimate)
      : NumericalError(what), last_estimate(estimate) {}
};

}  // namespace distillbound

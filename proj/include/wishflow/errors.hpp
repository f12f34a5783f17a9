#pragma once

#include <stdexcept>
#include <string>

namespace wishflow {

// Shape or argument contract violation.
class DimensionError : public std::invalid_argument {
public:
  explicit DimensionError(const std::string &msg) : std::invalid_argument(msg) {}
};

// Numerical failure (Cholesky breakdown, negative variance, singular solve).
class NumericalError : public std::runtime_error {
public:
  explicit NumericalError(const std::string &msg) : std::runtime_error(msg) {}
};

// SDE state became non-finite during integration.
class DivergenceError : public NumericalError {
public:
  DivergenceError(const std::string &msg, long step) : NumericalError(msg), step_index(step) {}
  long step_index;
};

// Malformed input file (bad CSV row, unknown column, empty dataset).
class ParseError : public std::runtime_error {
public:
  explicit ParseError(const std::string &msg) : std::runtime_error(msg) {}
};

// Training aborted (non-finite ELBO streak, bad gradients).
class TrainingError : public std::runtime_error {
public:
  explicit TrainingError(const std::string &msg) : std::runtime_error(msg) {}
};

} // namespace wishflow

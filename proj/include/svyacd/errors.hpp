#pragma once

#include <Eigen/Core>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace svyacd {

// Base class for all errors raised by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Invalid or inconsistent input data (column contents, invariant violations).
class DataError : public Error {
  using Error::Error;
};

// Invalid analysis or simulation configuration.
class ConfigError : public Error {
  using Error::Error;
};

// Design matrix is rank deficient; `columns` names the offending columns.
class RankDeficientError : public Error {
 public:
  RankDeficientError(const std::string& what, std::vector<std::string> cols)
      : Error(what), columns(std::move(cols)) {}
  std::vector<std::string> columns;
};

// Complete or quasi-complete separation in a logistic fit.
class SeparationError : public Error {
  using Error::Error;
};

// Iterative fit hit the iteration cap; carries the last iterate.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, Eigen::VectorXd last)
      : Error(what), last_coef(std::move(last)) {}
  Eigen::VectorXd last_coef;
};

// Estimating-equation Jacobian is numerically singular; `blocks` names the
// nearly dependent parameters.
class SingularSystemError : public Error {
 public:
  SingularSystemError(const std::string& what, std::vector<std::string> blks)
      : Error(what), blocks(std::move(blks)) {}
  std::vector<std::string> blocks;
};

// A sampling stratum contains a single PSU.
class LonelyPsuError : public Error {
  using Error::Error;
};

}  // namespace svyacd

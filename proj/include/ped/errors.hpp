#ifndef PED_ERRORS_HPP
#define PED_ERRORS_HPP

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace ped {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Invalid argument, shape mismatch, unknown kind string, bad config.
class ValidationError : public Error {
public:
  using Error::Error;
};

/// Argument outside the mathematical domain of a function.
class DomainError : public Error {
public:
  using Error::Error;
};

/// A matrix expected to be positive definite is not.
class DefinitenessError : public Error {
public:
  using Error::Error;
};

/// Iterative method exhausted its budget. Carries the last iterate.
class NonConvergenceError : public Error {
public:
  NonConvergenceError(const std::string& what, Eigen::VectorXd last)
      : Error(what), last_iterate_(std::move(last)) {}
  const Eigen::VectorXd& last_iterate() const noexcept { return last_iterate_; }

private:
  Eigen::VectorXd last_iterate_;
};

/// Values overflowed or left the finite range; `index` is the offending coordinate.
class DivergenceError : public Error {
public:
  DivergenceError(const std::string& what, std::ptrdiff_t index)
      : Error(what), index_(index) {}
  std::ptrdiff_t index() const noexcept { return index_; }

private:
  std::ptrdiff_t index_;
};

/// A quantity is undefined because a pre-activation sits on a ReLU kink.
class KinkError : public Error {
public:
  using Error::Error;
};

/// I - J is numerically singular at a fixed point.
class IllPosedError : public Error {
public:
  using Error::Error;
};

/// One or more columns of a batch failed to converge.
class BatchNonConvergenceError : public Error {
public:
  BatchNonConvergenceError(const std::string& what, std::vector<std::size_t> columns)
      : Error(what), columns_(std::move(columns)) {}
  const std::vector<std::size_t>& columns() const noexcept { return columns_; }

private:
  std::vector<std::size_t> columns_;
};

class IoError : public Error {
public:
  using Error::Error;
};

} // namespace ped

#endif // PED_ERRORS_HPP

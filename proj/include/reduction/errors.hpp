#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace reduction {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidDimensionError : public Error {
 public:
  using Error::Error;
};

class DimensionMismatchError : public Error {
 public:
  using Error::Error;
};

/// A point fell outside the closed simplex beyond the membership band.
class OutOfSimplexError : public Error {
 public:
  OutOfSimplexError(const std::string& what, std::vector<double> coords)
      : Error(what), coords_(std::move(coords)) {}
  const std::vector<double>& coords() const noexcept { return coords_; }

 private:
  std::vector<double> coords_;
};

class FaceError : public Error {
 public:
  using Error::Error;
};

class DegenerateStateError : public Error {
 public:
  using Error::Error;
};

/// Covariance not symmetric / not positive semidefinite, or bad time scale.
class SpecError : public Error {
 public:
  using Error::Error;
};

class ProjectorAlgebraError : public Error {
 public:
  using Error::Error;
};

class DensityMatrixError : public Error {
 public:
  using Error::Error;
};

class ZeroProbabilityCollapseError : public Error {
 public:
  using Error::Error;
};

class InvalidIncrementError : public Error {
 public:
  using Error::Error;
};

class NotDecoheredError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class ProfileError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

/// A truncated series did not reach the requested tolerance.
class ToleranceError : public Error {
 public:
  ToleranceError(const std::string& what, double residual)
      : Error(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace reduction

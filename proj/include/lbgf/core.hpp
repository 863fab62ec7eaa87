// Shared vocabulary types: error hierarchy, tagged costs, constants.
#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace lbgf {

inline constexpr double kPi = std::numbers::pi;

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A mathematical precondition failed (negative density, singular matrix, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Arguments are inconsistent with each other (size mismatch, empty grid).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// A run configuration or model spec is invalid. Raised before any computation.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// An iterative method ran out of iterations.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double residual, int iterations)
      : Error(what), residual_(residual), iterations_(iterations) {}
  double residual() const noexcept { return residual_; }
  int iterations() const noexcept { return iterations_; }

 private:
  double residual_;
  int iterations_;
};

/// A computed quantity failed a quality check (non-PSD diffusion matrix, z >= 1, ...).
class NumericalQualityError : public Error {
 public:
  using Error::Error;
};

/// A trajectory failed certification against the entropy-dissipation inequality.
class CertificationError : public Error {
 public:
  using Error::Error;
};

/*
 * Cost: a nonnegative value of a convex functional that may be +infinity.
 *
 * Infinity is carried as an explicit tag. value() of an infeasible cost
 * returns a large finite sentinel so that nothing downstream ever sees a raw
 * floating infinity; any sum touching an infeasible term stays infeasible.
 */
class Cost {
 public:
  static constexpr double kSentinel = std::numeric_limits<double>::max();

  constexpr Cost() = default;
  static constexpr Cost finite(double v) { return Cost(v, true); }
  static constexpr Cost infinite() { return Cost(kSentinel, false); }

  constexpr bool is_finite() const { return finite_; }
  constexpr double value() const { return finite_ ? value_ : kSentinel; }

  constexpr Cost& operator+=(const Cost& other) {
    if (!finite_ || !other.finite_) {
      *this = infinite();
    } else {
      value_ += other.value_;
    }
    return *this;
  }
  friend constexpr Cost operator+(Cost a, const Cost& b) { return a += b; }

  /// Multiplication by a nonnegative weight; 0 * infinity stays infeasible.
  constexpr Cost scaled(double factor) const {
    return finite_ ? Cost(value_ * factor, true) : infinite();
  }

 private:
  constexpr Cost(double v, bool finite) : value_(v), finite_(finite) {}
  double value_ = 0.0;
  bool finite_ = true;
};

}  // namespace lbgf

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace nphfit {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Precondition violations: dimension mismatches, non-finite entries.
struct InvalidInputError : Error {
  using Error::Error;
};

/// Structural invariant violations (bad alpha/T, malformed model files).
struct ValidationError : Error {
  using Error::Error;
};

/// Parameter outside the family's admissible range.
struct ParameterDomainError : Error {
  using Error::Error;
};

/// Overflow/underflow beyond what the stabilized paths can absorb.
struct NumericError : Error {
  using Error::Error;
};

struct ParseError : Error {
  using Error::Error;
};

struct FitError : Error {
  using Error::Error;
};

inline double log_sum_exp(std::span<const double> log_terms) {
  double m = -kInf;
  for (double v : log_terms)
    if (v > m) m = v;
  if (m == -kInf || std::isinf(m)) return m;
  double s = 0.0;
  for (double v : log_terms) s += std::exp(v - m);
  return m + std::log(s);
}

inline double log_sum_exp(double a, double b) {
  if (a == -kInf) return b;
  if (b == -kInf) return a;
  double m = a > b ? a : b;
  return m + std::log1p(std::exp(std::min(a, b) - m));
}

/// log(e^a - e^b) for a >= b.
inline double log_diff_exp(double a, double b) {
  if (b == -kInf) return a;
  if (a <= b) return -kInf;
  return a + std::log1p(-std::exp(b - a));
}

}  // namespace nphfit

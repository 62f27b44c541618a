#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "nphfit/common.hpp"
#include "nphfit/matrix_exp.hpp"
#include "nphfit/rng.hpp"

namespace nphfit {

/// Distribution of the absorption time of a Markov jump process with
/// transient states 1..p: initial row vector alpha, sub-intensity matrix T.
/// The exit vector is always derived as t = -T e.
struct PhaseTypeRep {
  RowVector alpha;
  Matrix T;

  int order() const { return static_cast<int>(alpha.size()); }
  Vector exit_vector() const { return -T.rowwise().sum(); }

  /// alpha (-T)^{-1} e
  double mean() const {
    Vector ones = Vector::Ones(order());
    Vector m = (-T).partialPivLu().solve(ones);
    return alpha * m;
  }
};

inline constexpr double kPhSumTol = 1e-10;

/// Checks all representation invariants; throws ValidationError naming the
/// violated one.
inline PhaseTypeRep validate(const RowVector& alpha, const Matrix& t_mat) {
  const Eigen::Index p = alpha.size();
  if (p < 1) throw ValidationError("phase-type: order must be >= 1");
  if (t_mat.rows() != p || t_mat.cols() != p)
    throw ValidationError("phase-type: alpha/T dimension mismatch");
  if (2 * p > kMaxMatrixOrder)
    throw ValidationError("phase-type: order exceeds supported cap");
  if (!alpha.allFinite() || !t_mat.allFinite())
    throw ValidationError("phase-type: non-finite parameter entries");
  for (Eigen::Index k = 0; k < p; ++k) {
    if (alpha(k) < -kPhSumTol)
      throw ValidationError("phase-type: alpha[" + std::to_string(k) + "] is negative");
  }
  if (std::abs(alpha.sum() - 1.0) > kPhSumTol)
    throw ValidationError("phase-type: alpha does not sum to 1");
  double max_exit = 0.0;
  for (Eigen::Index k = 0; k < p; ++k) {
    if (t_mat(k, k) >= 0.0)
      throw ValidationError("phase-type: diagonal of T must be negative (row " +
                            std::to_string(k) + ")");
    double row_sum = 0.0;
    for (Eigen::Index l = 0; l < p; ++l) {
      if (l != k && t_mat(k, l) < -kPhSumTol)
        throw ValidationError("phase-type: negative off-diagonal T(" + std::to_string(k) + "," +
                              std::to_string(l) + ")");
      row_sum += t_mat(k, l);
    }
    if (row_sum > kPhSumTol)
      throw ValidationError("phase-type: row sum positive in row " + std::to_string(k));
    max_exit = std::max(max_exit, -row_sum);
  }
  if (max_exit <= 0.0)
    throw ValidationError("phase-type: no state has a positive exit rate");
  return PhaseTypeRep{alpha, t_mat};
}

/// alpha e^{Ty} t
inline double ph_density(const PhaseTypeRep& rep, double y) {
  if (!(y >= 0.0)) throw InvalidInputError("ph_density: y must be nonnegative");
  Vector t = rep.exit_vector();
  double v = rep.alpha * mat_exp(rep.T * y) * t;
  return std::max(v, 0.0);
}

/// alpha e^{Ty} e
inline double ph_survival(const PhaseTypeRep& rep, double y) {
  if (!(y >= 0.0)) throw InvalidInputError("ph_survival: y must be nonnegative");
  Vector ones = Vector::Ones(rep.order());
  double v = rep.alpha * mat_exp(rep.T * y) * ones;
  return std::clamp(v, 0.0, 1.0);
}

/// Canonical representation: alpha = (1,0,...,0), bidiagonal T with rate
/// lambda, exit only from the last state.
inline PhaseTypeRep erlang(int q, double lambda) {
  if (q < 1) throw InvalidInputError("erlang: q must be >= 1");
  if (!(lambda > 0.0)) throw InvalidInputError("erlang: lambda must be positive");
  RowVector alpha = RowVector::Zero(q);
  alpha(0) = 1.0;
  Matrix t_mat = Matrix::Zero(q, q);
  for (int k = 0; k < q; ++k) {
    t_mat(k, k) = -lambda;
    if (k + 1 < q) t_mat(k, k + 1) = lambda;
  }
  return PhaseTypeRep{alpha, t_mat};
}

/// Deterministic random representation, rescaled so the mean matches
/// mean_scale. Strictly positive rates everywhere so no transition is frozen
/// at zero by later re-estimation.
inline PhaseTypeRep random_init(int p, std::uint64_t seed, double mean_scale) {
  if (p < 1) throw InvalidInputError("random_init: p must be >= 1");
  if (!(mean_scale > 0.0)) throw InvalidInputError("random_init: mean_scale must be positive");
  Rng rng(seed);
  RowVector alpha(p);
  for (int k = 0; k < p; ++k) alpha(k) = rng.uniform();
  alpha /= alpha.sum();
  Matrix t_mat = Matrix::Zero(p, p);
  for (int k = 0; k < p; ++k) {
    double total = 0.0;
    for (int l = 0; l < p; ++l) {
      if (l == k) continue;
      t_mat(k, l) = rng.uniform();
      total += t_mat(k, l);
    }
    double exit_rate = rng.uniform();
    t_mat(k, k) = -(total + exit_rate);
  }
  PhaseTypeRep rep{alpha, t_mat};
  double m = rep.mean();
  rep.T *= m / mean_scale;
  return validate(rep.alpha, rep.T);
}

}  // namespace nphfit

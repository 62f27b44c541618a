#pragma once

#include <algorithm>
#include <cmath>

#include "nphfit/common.hpp"

namespace nphfit {

inline constexpr int kMaxMatrixOrder = 64;

namespace detail {

inline double one_norm(const Matrix& a) {
  return a.cwiseAbs().colwise().sum().maxCoeff();
}

// Degree thresholds of the Higham (2005) scaling-and-squaring scheme.
inline constexpr double kPadeTheta3 = 1.495585217958292e-2;
inline constexpr double kPadeTheta5 = 2.539398330063230e-1;
inline constexpr double kPadeTheta7 = 9.504178996162932e-1;
inline constexpr double kPadeTheta9 = 2.097847961257068e+0;
inline constexpr double kPadeTheta13 = 5.371920351148152e+0;

inline void pade_low_degree(const Matrix& a, int degree, Matrix& u, Matrix& v) {
  static const double b3[] = {120., 60., 12., 1.};
  static const double b5[] = {30240., 15120., 3360., 420., 30., 1.};
  static const double b7[] = {17297280., 8648640., 1995840., 277200., 25200., 1512., 56., 1.};
  static const double b9[] = {17643225600., 8821612800., 2075673600., 302702400.,
                              30270240.,    2162160.,    110880.,     3960.,
                              90.,          1.};
  const double* b = degree == 3 ? b3 : degree == 5 ? b5 : degree == 7 ? b7 : b9;
  const Eigen::Index n = a.rows();
  const Matrix ident = Matrix::Identity(n, n);
  Matrix a2 = a * a;
  Matrix usum = b[1] * ident;
  Matrix vsum = b[0] * ident;
  Matrix pow = ident;
  for (int k = 1; 2 * k <= degree; ++k) {
    pow = (k == 1) ? a2 : Matrix(pow * a2);
    usum += b[2 * k + 1] * pow;
    vsum += b[2 * k] * pow;
  }
  u = a * usum;
  v = vsum;
}

inline void pade13(const Matrix& a, Matrix& u, Matrix& v) {
  static const double b[] = {64764752532480000., 32382376266240000., 7771770303897600.,
                             1187353796428800.,  129060195264000.,   10559470521600.,
                             670442572800.,      33522128640.,       1323241920.,
                             40840800.,          960960.,            16380.,
                             182.,               1.};
  const Eigen::Index n = a.rows();
  const Matrix ident = Matrix::Identity(n, n);
  Matrix a2 = a * a;
  Matrix a4 = a2 * a2;
  Matrix a6 = a2 * a4;
  u = a * (a6 * (b[13] * a6 + b[11] * a4 + b[9] * a2) + b[7] * a6 + b[5] * a4 +
           b[3] * a2 + b[1] * ident);
  v = a6 * (b[12] * a6 + b[10] * a4 + b[8] * a2) + b[6] * a6 + b[4] * a4 + b[2] * a2 +
      b[0] * ident;
}

// r ~ exp(A / 2^squarings) as a Pade approximant.
struct ExpCore {
  Matrix r;
  int squarings;
};

inline ExpCore exp_pade_core(const Matrix& a) {
  const double nrm = one_norm(a);
  Matrix u, v;
  int s = 0;
  if (nrm <= kPadeTheta3) {
    pade_low_degree(a, 3, u, v);
  } else if (nrm <= kPadeTheta5) {
    pade_low_degree(a, 5, u, v);
  } else if (nrm <= kPadeTheta7) {
    pade_low_degree(a, 7, u, v);
  } else if (nrm <= kPadeTheta9) {
    pade_low_degree(a, 9, u, v);
  } else {
    s = std::max(0, static_cast<int>(std::ceil(std::log2(nrm / kPadeTheta13))));
    Matrix as = a / std::ldexp(1.0, s);
    pade13(as, u, v);
  }
  Matrix num = v + u;
  Matrix den = v - u;
  return {den.partialPivLu().solve(num), s};
}

inline void check_exp_input(const Matrix& a) {
  if (a.rows() != a.cols() || a.rows() < 1)
    throw InvalidInputError("matrix exponential requires a square matrix of order >= 1");
  if (a.rows() > kMaxMatrixOrder)
    throw InvalidInputError("matrix order " + std::to_string(a.rows()) + " exceeds cap " +
                            std::to_string(kMaxMatrixOrder));
  if (!a.allFinite()) throw InvalidInputError("matrix exponential input has non-finite entries");
}

}  // namespace detail

/// e^A by scaling-and-squaring with Pade approximants.
inline Matrix mat_exp(const Matrix& a) {
  detail::check_exp_input(a);
  if (a.rows() == 1) {
    double e = std::exp(a(0, 0));
    if (!std::isfinite(e)) throw NumericError("matrix exponential overflow");
    Matrix r(1, 1);
    r(0, 0) = e;
    return r;
  }
  auto core = detail::exp_pade_core(a);
  Matrix r = std::move(core.r);
  for (int i = 0; i < core.squarings; ++i) r = r * r;
  if (!r.allFinite()) throw NumericError("matrix exponential overflow");
  return r;
}

/// e^A = factor * exp(log_scale). The squaring phase renormalizes by the
/// largest entry magnitude, so results stay representable far past the range
/// where plain e^A underflows or overflows.
struct ScaledMatrixExp {
  Matrix factor;
  double log_scale = 0.0;
};

inline ScaledMatrixExp mat_exp_scaled(const Matrix& a) {
  detail::check_exp_input(a);
  if (a.rows() == 1) {
    Matrix one = Matrix::Ones(1, 1);
    return {one, a(0, 0)};
  }
  auto core = detail::exp_pade_core(a);
  Matrix r = std::move(core.r);
  double log_scale = 0.0;
  for (int i = 0; i < core.squarings; ++i) {
    r = r * r;
    double mu = r.cwiseAbs().maxCoeff();
    if (mu == 0.0) return {Matrix::Zero(a.rows(), a.cols()), 0.0};
    if (!std::isfinite(mu)) throw NumericError("matrix exponential overflow in scaled squaring");
    r /= mu;
    log_scale = 2.0 * log_scale + std::log(mu);
  }
  return {r, log_scale};
}

struct ExpAndIntegral {
  Matrix exp_part;       // e^{T y}
  Matrix integral_part;  // int_0^y e^{T(y-u)} v w e^{T u} du
};

/// Both e^{Ty} and the convolution integral from one block exponential
/// of [[T, v w], [0, T]] (Van Loan 1978).
inline ExpAndIntegral exp_and_integral(const Matrix& t_mat, const Vector& v,
                                       const RowVector& w, double y) {
  const Eigen::Index p = t_mat.rows();
  if (t_mat.cols() != p || p < 1)
    throw InvalidInputError("exp_and_integral: T must be square");
  if (v.size() != p || w.size() != p)
    throw InvalidInputError("exp_and_integral: v/w dimension mismatch with T");
  if (2 * p > kMaxMatrixOrder)
    throw InvalidInputError("exp_and_integral: block order exceeds cap");
  if (!(y >= 0.0) || !std::isfinite(y))
    throw InvalidInputError("exp_and_integral: y must be finite and nonnegative");

  if (p == 1) {
    double e = std::exp(t_mat(0, 0) * y);
    Matrix ep(1, 1), ip(1, 1);
    ep(0, 0) = e;
    ip(0, 0) = v(0) * w(0) * y * e;
    return {ep, ip};
  }
  Matrix block = Matrix::Zero(2 * p, 2 * p);
  block.topLeftCorner(p, p) = t_mat;
  block.topRightCorner(p, p) = v * w;
  block.bottomRightCorner(p, p) = t_mat;
  Matrix full = mat_exp(block * y);
  return {full.topLeftCorner(p, p), full.topRightCorner(p, p)};
}

/// Fixed-block variant for hot loops: the corner product v*w is formed once,
/// then evaluated at many scale arguments.
class BlockExpEvaluator {
 public:
  BlockExpEvaluator(const Matrix& t_mat, const Vector& v, const RowVector& w)
      : p_(static_cast<int>(t_mat.rows())) {
    if (t_mat.cols() != p_ || v.size() != p_ || w.size() != p_)
      throw InvalidInputError("BlockExpEvaluator: dimension mismatch");
    if (2 * p_ > kMaxMatrixOrder) throw InvalidInputError("BlockExpEvaluator: order cap exceeded");
    if (p_ == 1) {
      scalar_rate_ = t_mat(0, 0);
      scalar_vw_ = v(0) * w(0);
    } else {
      block_ = Matrix::Zero(2 * p_, 2 * p_);
      block_.topLeftCorner(p_, p_) = t_mat;
      block_.topRightCorner(p_, p_) = v * w;
      block_.bottomRightCorner(p_, p_) = t_mat;
    }
  }

  int order() const { return p_; }

  void eval(double x, Matrix& exp_part, Matrix& integral_part) const {
    if (p_ == 1) {
      double e = std::exp(scalar_rate_ * x);
      exp_part.resize(1, 1);
      integral_part.resize(1, 1);
      exp_part(0, 0) = e;
      integral_part(0, 0) = scalar_vw_ * x * e;
      return;
    }
    Matrix full = mat_exp(block_ * x);
    exp_part = full.topLeftCorner(p_, p_);
    integral_part = full.topRightCorner(p_, p_);
  }

  /// Scaled form: exp_part and integral_part share one log factor, so deep
  /// tail arguments stay representable.
  void eval_scaled(double x, Matrix& exp_part, Matrix& integral_part, double& log_scale) const {
    if (p_ == 1) {
      exp_part.resize(1, 1);
      integral_part.resize(1, 1);
      exp_part(0, 0) = 1.0;
      integral_part(0, 0) = scalar_vw_ * x;
      log_scale = scalar_rate_ * x;
      return;
    }
    auto se = mat_exp_scaled(block_ * x);
    exp_part = se.factor.topLeftCorner(p_, p_);
    integral_part = se.factor.topRightCorner(p_, p_);
    log_scale = se.log_scale;
  }

 private:
  int p_;
  double scalar_rate_ = 0.0;
  double scalar_vw_ = 0.0;
  Matrix block_;
};

}  // namespace nphfit

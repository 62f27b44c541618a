#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "nphfit/nphfit.hpp"

namespace testutil {

using Fn1 = std::function<double(double)>;

inline double adaptive_simpson_rec(const Fn1& f, double a, double b, double fa, double fm,
                                   double fb, double whole, double tol, int depth) {
  double m = 0.5 * (a + b);
  double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  double flm = f(lm), frm = f(rm);
  double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) < 15.0 * tol) return left + right + delta / 15.0;
  return adaptive_simpson_rec(f, a, m, fa, flm, fm, left, tol * 0.5, depth - 1) +
         adaptive_simpson_rec(f, m, b, fm, frm, fb, right, tol * 0.5, depth - 1);
}

/// Independent quadrature oracle for integrals of smooth scalar functions.
inline double integrate(const Fn1& f, double a, double b, double tol = 1e-10, int depth = 40) {
  double fa = f(a), fb = f(b), m = 0.5 * (a + b), fm = f(m);
  double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return adaptive_simpson_rec(f, a, b, fa, fm, fb, whole, tol, depth);
}

/// Kolmogorov-Smirnov distance between an empirical sample and a model CDF.
inline double ks_distance(std::vector<double> draws, const Fn1& cdf) {
  std::sort(draws.begin(), draws.end());
  const double n = static_cast<double>(draws.size());
  double d = 0.0;
  for (size_t i = 0; i < draws.size(); ++i) {
    double c = cdf(draws[i]);
    d = std::max(d, std::abs((i + 1) / n - c));
    d = std::max(d, std::abs(i / n - c));
  }
  return d;
}

/// Grid scan plus golden-section refinement; the numeric argmax oracle for
/// checking closed-form maximizers.
inline double argmax_1d(const Fn1& f, double lo, double hi, int grid = 400) {
  double best_x = lo, best_f = f(lo);
  for (int i = 1; i <= grid; ++i) {
    double x = lo + (hi - lo) * i / grid;
    double v = f(x);
    if (v > best_f) {
      best_f = v;
      best_x = x;
    }
  }
  double a = std::max(lo, best_x - (hi - lo) / grid);
  double b = std::min(hi, best_x + (hi - lo) / grid);
  const double gr = 0.6180339887498949;
  double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
  double f1 = f(x1), f2 = f(x2);
  while (b - a > 1e-10) {
    if (f1 < f2) {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + gr * (b - a);
      f2 = f(x2);
    } else {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - gr * (b - a);
      f1 = f(x1);
    }
  }
  return 0.5 * (a + b);
}

/// Brute-force zeta series, the oracle for the tail-corrected evaluation.
inline double zeta_series(double theta, long terms = 40000000) {
  double acc = 0.0;
  for (long i = terms; i >= 1; --i) acc += std::pow(static_cast<double>(i), -theta);
  return acc;
}

inline double zeta_prime_series(double theta, long terms = 40000000) {
  double acc = 0.0;
  for (long i = terms; i >= 1; --i)
    acc -= std::log(static_cast<double>(i)) * std::pow(static_cast<double>(i), -theta);
  return acc;
}

/// Random stable matrix (eigenvalues strictly in the left half-plane).
inline nphfit::Matrix random_stable_matrix(int n, std::uint64_t seed) {
  nphfit::Rng rng(seed);
  nphfit::Matrix a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = rng.uniform(-1.0, 1.0);
  double shift = a.cwiseAbs().rowwise().sum().maxCoeff();
  a -= (shift + 0.1) * nphfit::Matrix::Identity(n, n);
  return a;
}

inline nphfit::Dataset make_dataset(const std::vector<double>& ys) {
  nphfit::Dataset d;
  for (double y : ys) d.exact.push_back({y, 1.0});
  return d;
}

}  // namespace testutil

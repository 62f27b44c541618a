#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "nphfit/common.hpp"
#include "nphfit/dataset.hpp"
#include "nphfit/matrix_exp.hpp"
#include "nphfit/phase_type.hpp"
#include "nphfit/rng.hpp"
#include "nphfit/scaling.hpp"

namespace nphfit {

/// Scale mixture of a phase-type distribution over the scaling family's
/// discrete support. The infinite level series is evaluated up to the index
/// where the scaling tail mass drops below trunc_eps (each level term is
/// bounded, so the truncation error inherits that bound).
struct NphModel {
  ScalingFamily scaling;
  PhaseTypeRep ph;
  double trunc_eps = 1e-12;

  int levels(bool* capped = nullptr) const { return scaling.truncation_index(trunc_eps, capped); }

  double density(double y) const {
    if (!(y >= 0.0)) throw InvalidInputError("density: y must be nonnegative");
    int levels_n = levels();
    auto pi = scaling.pmf_table(levels_n);
    auto s = scaling.support_table(levels_n);
    Vector t = ph.exit_vector();
    double sum = 0.0;
    for (int i = 0; i < levels_n; ++i) {
      double term = ph.alpha * mat_exp(ph.T * (y / s[i])) * t;
      sum += pi[i] * std::max(term, 0.0) / s[i];
    }
    return sum;
  }

  double survival(double y) const {
    std::vector<double> out = survival_batch(std::span<const double>(&y, 1));
    return out[0];
  }

  /// Batch evaluation; the order-1 case collapses to vectorized scalar
  /// exponentials, which criterion-scale Monte Carlo checks rely on.
  std::vector<double> survival_batch(std::span<const double> ys) const {
    int levels_n = levels();
    auto pi = scaling.pmf_table(levels_n);
    auto s = scaling.support_table(levels_n);
    std::vector<double> out(ys.size());
    if (ph.order() == 1) {
      double rate = -ph.T(0, 0);
      Eigen::Map<const Eigen::ArrayXd> s_arr(s.data(), levels_n);
      Eigen::Map<const Eigen::ArrayXd> pi_arr(pi.data(), levels_n);
      Eigen::ArrayXd neg_rate_inv_s = -rate / s_arr;
      for (size_t j = 0; j < ys.size(); ++j) {
        if (!(ys[j] >= 0.0)) throw InvalidInputError("survival: y must be nonnegative");
        out[j] = std::clamp((pi_arr * (neg_rate_inv_s * ys[j]).exp()).sum(), 0.0, 1.0);
      }
      return out;
    }
    Vector ones = Vector::Ones(ph.order());
    for (size_t j = 0; j < ys.size(); ++j) {
      if (!(ys[j] >= 0.0)) throw InvalidInputError("survival: y must be nonnegative");
      double sum = 0.0;
      for (int i = 0; i < levels_n; ++i)
        sum += pi[i] * std::clamp<double>(ph.alpha * mat_exp(ph.T * (ys[j] / s[i])) * ones, 0.0, 1.0);
      out[j] = std::clamp(sum, 0.0, 1.0);
    }
    return out;
  }

  /// log density via log-sum-exp over level terms, each evaluated in scaled
  /// form so deep-tail arguments cannot underflow the whole sum.
  double log_density(double y) const {
    if (!(y >= 0.0)) throw InvalidInputError("log_density: y must be nonnegative");
    int levels_n = levels();
    auto pi = scaling.pmf_table(levels_n);
    auto s = scaling.support_table(levels_n);
    Vector t = ph.exit_vector();
    std::vector<double> terms(static_cast<size_t>(levels_n));
    for (int i = 0; i < levels_n; ++i) {
      if (pi[i] <= 0.0) {
        terms[i] = -kInf;
        continue;
      }
      auto se = mat_exp_scaled(ph.T * (y / s[i]));
      double core = ph.alpha * se.factor * t;
      terms[i] = core > 0.0 ? std::log(pi[i]) - std::log(s[i]) + se.log_scale + std::log(core)
                            : -kInf;
    }
    return log_sum_exp(terms);
  }

  double log_survival(double y) const {
    if (!(y >= 0.0)) throw InvalidInputError("log_survival: y must be nonnegative");
    int levels_n = levels();
    auto pi = scaling.pmf_table(levels_n);
    auto s = scaling.support_table(levels_n);
    Vector ones = Vector::Ones(ph.order());
    std::vector<double> terms(static_cast<size_t>(levels_n));
    for (int i = 0; i < levels_n; ++i) {
      if (pi[i] <= 0.0) {
        terms[i] = -kInf;
        continue;
      }
      auto se = mat_exp_scaled(ph.T * (y / s[i]));
      double core = ph.alpha * se.factor * ones;
      terms[i] = core > 0.0 ? std::log(pi[i]) + se.log_scale + std::log(core) : -kInf;
    }
    return log_sum_exp(terms);
  }

  /// log P(Y in (lo, hi]); hi may be +inf.
  double log_interval_prob(double lo, double hi) const {
    if (!(lo >= 0.0) || !(hi > lo)) throw InvalidInputError("log_interval_prob: bad interval");
    double ls = log_survival(lo);
    if (!std::isfinite(hi)) return ls;
    return log_diff_exp(ls, log_survival(hi));
  }

  /// Weighted log likelihood over exact and censored observations. A point
  /// carrying zero probability mass yields -inf and is reported through
  /// `diagnostics` rather than thrown.
  double log_likelihood(const Dataset& data, std::vector<std::string>* diagnostics = nullptr) const {
    data.check();
    double ll = 0.0;
    for (const auto& o : data.exact) {
      double ld = log_density(o.y);
      if (ld == -kInf && diagnostics)
        diagnostics->push_back("zero density at exact observation y=" + std::to_string(o.y));
      ll += o.weight * ld;
    }
    for (const auto& o : data.censored) {
      double lp = log_interval_prob(o.lower, o.upper);
      if (lp == -kInf && diagnostics)
        diagnostics->push_back("zero probability for censored interval (" +
                               std::to_string(o.lower) + ", " + std::to_string(o.upper) + "]");
      ll += o.weight * lp;
    }
    return ll;
  }

  /// Draw a level from pi, then run the jump process with generator T/s_i
  /// until absorption. Deterministic in the seed.
  std::vector<double> simulate(int n, std::uint64_t seed) const {
    if (n < 1) throw InvalidInputError("simulate: n must be >= 1");
    Rng rng(seed);
    const int p = ph.order();
    Vector exit = ph.exit_vector();
    // cached pmf prefix, extended on demand; normalizer computed once
    double zeta_inv = scaling.kind == ScalingFamily::Kind::Zeta
                          ? 1.0 / detail::zeta_derivatives(scaling.theta[0]).zeta
                          : 0.0;
    auto pmf_fast = [&](int level) {
      if (scaling.kind == ScalingFamily::Kind::Zeta)
        return std::exp(-scaling.theta[0] * std::log(static_cast<double>(level))) * zeta_inv;
      return scaling.pmf(level);
    };
    std::vector<double> prefix;  // prefix[i] = P(level <= i+1)
    auto draw_level = [&](double u) {
      size_t i = 0;
      while (true) {
        if (i >= prefix.size()) {
          double prev = prefix.empty() ? 0.0 : prefix.back();
          prefix.push_back(prev + pmf_fast(static_cast<int>(prefix.size()) + 1));
        }
        if (u <= prefix[i] || prefix.size() >= (1u << 26)) return static_cast<int>(i) + 1;
        ++i;
      }
    };
    std::vector<double> out(static_cast<size_t>(n));
    for (int j = 0; j < n; ++j) {
      int level = draw_level(rng.uniform());
      double s = scaling.support(level);
      // initial state
      double u = rng.uniform();
      int k = 0;
      double acc = ph.alpha(0);
      while (u > acc && k + 1 < p) acc += ph.alpha(++k);
      double time = 0.0;
      while (true) {
        double total_rate = -ph.T(k, k);
        time += rng.exponential(total_rate / s);
        double u2 = rng.uniform() * total_rate;
        double cum = 0.0;
        int next = -1;
        for (int l = 0; l < p; ++l) {
          if (l == k) continue;
          cum += ph.T(k, l);
          if (u2 <= cum) {
            next = l;
            break;
          }
        }
        if (next < 0) break;  // exited to absorption
        k = next;
      }
      out[j] = time;
    }
    return out;
  }

  /// Numeric quantile by bisection on the survival function.
  double quantile(double u, double tol = 1e-10) const {
    if (!(u > 0.0 && u < 1.0)) throw InvalidInputError("quantile: u must lie in (0,1)");
    double target = 1.0 - u;  // survival value at the quantile
    double hi = 1.0;
    int guard = 0;
    while (survival(hi) > target && guard++ < 4000) hi *= 2.0;
    double lo = 0.0;
    while (hi - lo > tol * std::max(1.0, hi)) {
      double mid = 0.5 * (lo + hi);
      if (survival(mid) > target)
        lo = mid;
      else
        hi = mid;
    }
    return 0.5 * (lo + hi);
  }
};

}  // namespace nphfit

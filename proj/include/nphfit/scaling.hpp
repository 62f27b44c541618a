#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "nphfit/common.hpp"
#include "nphfit/rng.hpp"

namespace nphfit {
namespace detail {

struct ZetaTriple {
  double zeta;
  double dzeta;
  double ddzeta;
};

/// Riemann zeta and its first two derivatives for theta > 1, by truncated
/// series with Euler-Maclaurin tail corrections. Accurate to well below
/// 1e-12 relative over theta in (1.001, 50).
inline ZetaTriple zeta_derivatives(double theta) {
  if (!(theta > 1.0)) throw ParameterDomainError("zeta requires theta > 1");
  constexpr int kTerms = 2000;
  double z = 0.0, dz = 0.0, ddz = 0.0;
  for (int i = 1; i < kTerms; ++i) {
    double li = std::log(static_cast<double>(i));
    double term = std::exp(-theta * li);
    z += term;
    dz -= li * term;
    ddz += li * li * term;
  }
  const double n = kTerms;
  const double ln = std::log(n);
  const double tm1 = theta - 1.0;
  const double n1t = std::exp(-tm1 * ln);  // n^{1-theta}
  const double nt = n1t / n;               // n^{-theta}
  const double nt1 = nt / n;
  const double nt3 = nt1 / (n * n);
  // Sum_{i>=n} i^-theta = n^{1-t}/(t-1) + n^-t/2 + t n^{-t-1}/12 - t(t+1)(t+2) n^{-t-3}/720
  double cubic = theta * (theta + 1.0) * (theta + 2.0);
  z += n1t / tm1 + 0.5 * nt + theta * nt1 / 12.0 - cubic * nt3 / 720.0;
  // d/dtheta of the remainder terms
  double dcubic = 3.0 * theta * theta + 6.0 * theta + 2.0;
  dz += n1t * (-ln / tm1 - 1.0 / (tm1 * tm1)) - 0.5 * ln * nt +
        nt1 * (1.0 - theta * ln) / 12.0 - nt3 * (dcubic - cubic * ln) / 720.0;
  // second derivative of the remainder terms
  ddz += n1t * (ln * ln / tm1 + 2.0 * ln / (tm1 * tm1) + 2.0 / (tm1 * tm1 * tm1)) +
         0.5 * ln * ln * nt + nt1 * ln * (theta * ln - 2.0) / 12.0 -
         nt3 * ((6.0 * theta + 6.0) - 2.0 * ln * dcubic + cubic * ln * ln) / 720.0;
  return {z, dz, ddz};
}

inline double normal_upper_tail(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

/// Expands around x0 until [a,b] brackets a maximum of f, then golden-section.
inline double line_maximize(const std::function<double(double)>& f, double x0, double h,
                            double tol) {
  double a = x0 - h, m = x0, b = x0 + h;
  double fa = f(a), fm = f(m), fb = f(b);
  for (int guard = 0; guard < 120 && fa > fm; ++guard) {
    b = m;
    fb = fm;
    m = a;
    fm = fa;
    h *= 2.0;
    a = m - h;
    fa = f(a);
  }
  for (int guard = 0; guard < 120 && fb > fm; ++guard) {
    a = m;
    fa = fm;
    m = b;
    fm = fb;
    h *= 2.0;
    b = m + h;
    fb = f(b);
  }
  const double gr = 0.6180339887498949;
  double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
  double f1 = f(x1), f2 = f(x2);
  int guard = 0;
  while (b - a > tol && guard++ < 400) {
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

}  // namespace detail

/// Parametric discrete scaling distribution pi(theta) on a fixed positive
/// support grid. The level index i is 1-based throughout.
class ScalingFamily {
 public:
  enum class Kind { GeometricPareto, Zeta, DiscretizedWeibull, DiscretizedLognormal };

  Kind kind = Kind::GeometricPareto;
  double c = 1.0;                  // grid step for the geometric supports
  std::vector<double> theta;       // family parameters, see constructors
  bool theta_fixed = false;        // skip M-step updates when set
  int level_cap = 10000;           // truncation_index never exceeds this

  static ScalingFamily geometric_pareto(double c, double theta) {
    ScalingFamily f;
    f.kind = Kind::GeometricPareto;
    f.c = c;
    f.theta = {theta};
    f.check_domain();
    return f;
  }
  static ScalingFamily zeta(double theta) {
    ScalingFamily f;
    f.kind = Kind::Zeta;
    f.theta = {theta};
    f.check_domain();
    return f;
  }
  static ScalingFamily discretized_weibull(double c, double lambda, double p) {
    ScalingFamily f;
    f.kind = Kind::DiscretizedWeibull;
    f.c = c;
    f.theta = {lambda, p};
    f.check_domain();
    return f;
  }
  static ScalingFamily discretized_lognormal(double mu, double sigma) {
    ScalingFamily f;
    f.kind = Kind::DiscretizedLognormal;
    f.theta = {mu, sigma};
    f.check_domain();
    return f;
  }

  void check_domain() const { check_theta(theta); }

  void check_theta(const std::vector<double>& th) const {
    switch (kind) {
      case Kind::GeometricPareto:
        if (!(c > 0.0)) throw ParameterDomainError("geom-pareto: c must be positive");
        if (th.size() != 1 || !(th[0] > 0.0))
          throw ParameterDomainError("geom-pareto: requires theta > 0");
        break;
      case Kind::Zeta:
        if (th.size() != 1 || !(th[0] > 1.0))
          throw ParameterDomainError("zeta: requires theta > 1");
        break;
      case Kind::DiscretizedWeibull:
        if (!(c > 0.0)) throw ParameterDomainError("disc-weibull: c must be positive");
        if (th.size() != 2 || !(th[0] > 0.0) || !(th[1] > 0.0))
          throw ParameterDomainError("disc-weibull: requires lambda > 0 and p > 0");
        break;
      case Kind::DiscretizedLognormal:
        if (th.size() != 2 || !std::isfinite(th[0]) || !(th[1] > 0.0))
          throw ParameterDomainError("disc-lognormal: requires finite mu and sigma > 0");
        break;
    }
  }

  ScalingFamily with_theta(std::vector<double> th) const {
    ScalingFamily f = *this;
    f.theta = std::move(th);
    f.check_domain();
    return f;
  }

  double support(int level) const {
    switch (kind) {
      case Kind::GeometricPareto:
        return std::exp((level - 1) * c);
      case Kind::Zeta:
        return static_cast<double>(level);
      case Kind::DiscretizedWeibull:
        return std::exp(level * c);
      case Kind::DiscretizedLognormal:
        return std::exp(static_cast<double>(level - 1));
    }
    return 0.0;
  }

  double pmf(int level) const { return pmf_at(level, theta); }

  double pmf_at(int level, const std::vector<double>& th) const {
    check_theta(th);
    if (level < 1) throw InvalidInputError("pmf: level must be >= 1");
    switch (kind) {
      case Kind::GeometricPareto: {
        double rho = std::exp(-th[0] * c);
        return std::pow(rho, level - 1) * (1.0 - rho);
      }
      case Kind::Zeta:
        return std::exp(-th[0] * std::log(static_cast<double>(level))) /
               detail::zeta_derivatives(th[0]).zeta;
      case Kind::DiscretizedWeibull: {
        auto surv = [&](double x) { return std::exp(-std::pow(th[0] * x, th[1])); };
        if (level == 1) return 1.0 - surv(support(2));
        return surv(support(level)) - surv(support(level + 1));
      }
      case Kind::DiscretizedLognormal: {
        auto surv = [&](int i) {
          return detail::normal_upper_tail((static_cast<double>(i - 1) - th[0]) / th[1]);
        };
        if (level == 1) return 1.0 - surv(2);
        return surv(level) - surv(level + 1);
      }
    }
    return 0.0;
  }

  /// pi_1..pi_count in one pass; factors the normalizer out of the per-level
  /// work, which matters when thousands of levels are in play.
  std::vector<double> pmf_table(int count) const {
    std::vector<double> out(static_cast<size_t>(count));
    switch (kind) {
      case Kind::GeometricPareto: {
        double rho = std::exp(-theta[0] * c);
        double cur = 1.0 - rho;
        for (int i = 0; i < count; ++i, cur *= rho) out[i] = cur;
        break;
      }
      case Kind::Zeta: {
        double inv_z = 1.0 / detail::zeta_derivatives(theta[0]).zeta;
        for (int i = 0; i < count; ++i)
          out[i] = std::exp(-theta[0] * std::log(static_cast<double>(i + 1))) * inv_z;
        break;
      }
      case Kind::DiscretizedWeibull:
      case Kind::DiscretizedLognormal: {
        double prev = tail_mass(1);
        out[0] = 1.0 - prev;
        for (int i = 1; i < count; ++i) {
          double next = tail_mass(i + 1);
          out[i] = std::max(0.0, prev - next);
          prev = next;
        }
        break;
      }
    }
    return out;
  }

  std::vector<double> support_table(int count) const {
    std::vector<double> out(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) out[i] = support(i + 1);
    return out;
  }

  /// Mass strictly beyond the given level.
  double tail_mass(int level) const {
    switch (kind) {
      case Kind::GeometricPareto:
        return std::pow(std::exp(-theta[0] * c), level);
      case Kind::Zeta: {
        double z = detail::zeta_derivatives(theta[0]).zeta;
        double head = 0.0;
        for (int i = 1; i <= level; ++i)
          head += std::exp(-theta[0] * std::log(static_cast<double>(i)));
        return std::max(0.0, (z - head) / z);
      }
      case Kind::DiscretizedWeibull:
        return std::exp(-std::pow(theta[0] * support(level + 1), theta[1]));
      case Kind::DiscretizedLognormal:
        return detail::normal_upper_tail((static_cast<double>(level) - theta[0]) / theta[1]);
    }
    return 0.0;
  }

  /// Smallest I whose head mass reaches 1 - eps, capped at level_cap. For the
  /// zeta family the integral tail bound stands in for exact inversion.
  int truncation_index(double eps, bool* capped = nullptr) const {
    if (!(eps > 0.0 && eps < 1.0))
      throw InvalidInputError("truncation_index: eps must lie in (0,1)");
    if (capped) *capped = false;
    long idx = 1;
    switch (kind) {
      case Kind::GeometricPareto: {
        idx = static_cast<long>(std::ceil(-std::log(eps) / (theta[0] * c)));
        break;
      }
      case Kind::Zeta: {
        double th = theta[0];
        double z = detail::zeta_derivatives(th).zeta;
        double log_i = -std::log((th - 1.0) * z * eps) / (th - 1.0);
        if (log_i > std::log(2.0 * static_cast<double>(level_cap)))
          idx = static_cast<long>(level_cap) + 1;
        else
          idx = static_cast<long>(std::ceil(std::exp(log_i)));
        break;
      }
      case Kind::DiscretizedWeibull:
      case Kind::DiscretizedLognormal: {
        while (idx < level_cap && tail_mass(static_cast<int>(idx)) > eps) ++idx;
        break;
      }
    }
    if (idx < 1) idx = 1;
    if (idx > level_cap) {
      if (capped) *capped = true;
      idx = level_cap;
    }
    return static_cast<int>(idx);
  }

  /// Maximizer of sum_i w_i log pi_i(theta) over the family's domain.
  /// Returns the current theta untouched when theta_fixed is set.
  std::vector<double> m_step(std::span<const double> weights) const {
    if (theta_fixed) return theta;
    double total = 0.0;
    for (double w : weights) total += w;
    if (!(total > 0.0)) throw InvalidInputError("m_step: weights must have positive sum");
    switch (kind) {
      case Kind::GeometricPareto:
        return m_step_geometric(weights, total);
      case Kind::Zeta:
        return m_step_zeta(weights, total);
      case Kind::DiscretizedWeibull:
      case Kind::DiscretizedLognormal:
        return m_step_coordinate_search(weights);
    }
    return theta;
  }

  double weighted_log_pmf(std::span<const double> weights, const std::vector<double>& th) const {
    double q = 0.0;
    for (size_t i = 0; i < weights.size(); ++i) {
      if (weights[i] < 1e-300) continue;  // carries no information, avoids log underflow
      double p = pmf_at(static_cast<int>(i) + 1, th);
      if (p <= 0.0) return -kInf;
      q += weights[i] * std::log(p);
    }
    return q;
  }

  std::vector<double> random_start(Rng& rng) const {
    switch (kind) {
      case Kind::GeometricPareto:
        return {rng.uniform(0.4, 2.5)};
      case Kind::Zeta:
        return {rng.uniform(1.3, 3.5)};
      case Kind::DiscretizedWeibull:
        return {rng.uniform(0.3, 2.0), rng.uniform(0.5, 1.8)};
      case Kind::DiscretizedLognormal:
        return {rng.uniform(-0.5, 2.0), rng.uniform(0.5, 2.0)};
    }
    return theta;
  }

 private:
  std::vector<double> m_step_geometric(std::span<const double> weights, double total) const {
    double moment = 0.0;
    for (size_t i = 0; i < weights.size(); ++i)
      moment += weights[i] * static_cast<double>(i + 1);
    double ratio = total / moment;
    if (!(ratio < 1.0))
      throw FitError(
          "m_step: all scaling weight sits at level 1; the geometric-tail family degenerates "
          "here, consider a lighter-tailed family");
    return {-std::log1p(-ratio) / c};
  }

  std::vector<double> m_step_zeta(std::span<const double> weights, double total) const {
    constexpr double kLo = 1.0 + 1e-6;
    constexpr double kHi = 50.0;
    double rhs = 0.0;
    for (size_t i = 0; i < weights.size(); ++i)
      rhs -= weights[i] * std::log(static_cast<double>(i + 1));
    rhs /= total;  // target value of zeta'/zeta, always <= 0
    if (rhs >= 0.0) return {kHi};
    auto g = [&](double th) {
      auto z = detail::zeta_derivatives(th);
      return z.dzeta / z.zeta - rhs;
    };
    double lo = kLo, hi = kHi;
    if (g(hi) <= 0.0) return {kHi};
    double x = std::clamp(theta[0], lo, hi);
    for (int it = 0; it < 200; ++it) {
      auto z = detail::zeta_derivatives(x);
      double gx = z.dzeta / z.zeta - rhs;
      if (gx > 0.0)
        hi = x;
      else
        lo = x;
      double slope = (z.ddzeta * z.zeta - z.dzeta * z.dzeta) / (z.zeta * z.zeta);
      double step = slope != 0.0 ? -gx / slope : 0.0;
      double next = x + step;
      if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);  // bisection fallback
      if (std::abs(next - x) < 1e-10) return {next};
      x = next;
    }
    return {x};
  }

  std::vector<double> m_step_coordinate_search(std::span<const double> weights) const {
    // Cyclic golden-section over transformed coordinates; positive parameters
    // move in log space. Keeps the incumbent when a sweep fails to improve.
    const bool lognormal = kind == Kind::DiscretizedLognormal;
    auto to_internal = [&](const std::vector<double>& th) {
      std::vector<double> z(2);
      z[0] = lognormal ? th[0] : std::log(th[0]);
      z[1] = std::log(th[1]);
      return z;
    };
    auto from_internal = [&](const std::vector<double>& z) {
      std::vector<double> th(2);
      th[0] = lognormal ? z[0] : std::exp(z[0]);
      th[1] = std::exp(z[1]);
      return th;
    };
    std::vector<double> z = to_internal(theta);
    auto objective = [&](const std::vector<double>& zz) {
      return weighted_log_pmf(weights, from_internal(zz));
    };
    int sweeps = 0;
    double move = kInf;
    while (sweeps < 2 || (move > 1e-8 && sweeps < 80)) {
      move = 0.0;
      for (int coord = 0; coord < 2; ++coord) {
        std::vector<double> probe = z;
        auto f1d = [&](double v) {
          probe[coord] = v;
          return objective(probe);
        };
        double best = detail::line_maximize(f1d, z[coord], 0.5, 1e-10);
        probe[coord] = best;
        if (objective(probe) >= objective(z)) {
          move = std::max(move, std::abs(best - z[coord]));
          z[coord] = best;
        }
      }
      ++sweeps;
    }
    std::vector<double> cand = from_internal(z);
    if (weighted_log_pmf(weights, cand) >= weighted_log_pmf(weights, theta)) return cand;
    return theta;
  }
};

/// Family spec strings: geom-pareto:c=<real> | zeta | disc-weibull:c=<real> |
/// disc-lognormal. Starting parameters are domain-valid defaults; fitting
/// overrides them per restart.
inline ScalingFamily parse_family_spec(const std::string& spec) {
  auto fail = [&](const std::string& why) -> ScalingFamily {
    throw ParseError("family spec '" + spec + "': " + why);
  };
  std::string head = spec;
  std::string args;
  if (auto pos = spec.find(':'); pos != std::string::npos) {
    head = spec.substr(0, pos);
    args = spec.substr(pos + 1);
  }
  double c = 1.0;
  bool saw_c = false;
  if (!args.empty()) {
    if (args.rfind("c=", 0) != 0 || args.find(',') != std::string::npos)
      return fail("expected the single option c=<real>");
    try {
      size_t used = 0;
      c = std::stod(args.substr(2), &used);
      if (used != args.size() - 2) return fail("bad number '" + args.substr(2) + "'");
    } catch (const std::exception&) {
      return fail("bad number '" + args.substr(2) + "'");
    }
    saw_c = true;
  }
  try {
    if (head == "geom-pareto") return ScalingFamily::geometric_pareto(c, 1.0);
    if (head == "disc-weibull") return ScalingFamily::discretized_weibull(c, 1.0, 1.0);
    if (saw_c) return fail("family '" + head + "' takes no c option");
    if (head == "zeta") return ScalingFamily::zeta(2.0);
    if (head == "disc-lognormal") return ScalingFamily::discretized_lognormal(0.0, 1.0);
  } catch (const ParameterDomainError& e) {
    return fail(e.what());
  }
  return fail("unknown family (expected geom-pareto, zeta, disc-weibull or disc-lognormal)");
}

inline std::string family_spec_string(const ScalingFamily& fam) {
  std::string s;
  switch (fam.kind) {
    case ScalingFamily::Kind::GeometricPareto:
      s = "geom-pareto:c=" + std::to_string(fam.c);
      break;
    case ScalingFamily::Kind::Zeta:
      s = "zeta";
      break;
    case ScalingFamily::Kind::DiscretizedWeibull:
      s = "disc-weibull:c=" + std::to_string(fam.c);
      break;
    case ScalingFamily::Kind::DiscretizedLognormal:
      s = "disc-lognormal";
      break;
  }
  return s;
}

}  // namespace nphfit

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "nphfit/common.hpp"
#include "nphfit/em_fit.hpp"

namespace nphfit {

inline constexpr double kIntervalProbFloor = 1e-300;

/// E-step replacement for censored observations. Per level the same block
/// exponential delivers e^{T x} and the integral with corner e*alpha (not
/// t*alpha as in the exact-data case); interval quantities fall out of
/// endpoint differences, right censoring drops the upper-endpoint terms.
inline SufficientStats e_step_censored(const NphModel& model,
                                       const std::vector<CensoredObservation>& obs,
                                       int threads = 0) {
  if (obs.empty()) throw InvalidInputError("e_step_censored: no observations");
  const int p = model.ph.order();
  const int levels_n = model.levels();
  const auto pi = model.scaling.pmf_table(levels_n);
  const auto sup = model.scaling.support_table(levels_n);
  const Vector exit = model.ph.exit_vector();
  const RowVector alpha = model.ph.alpha;
  const Matrix t_mat = model.ph.T;
  const Vector ones = Vector::Ones(p);
  // row vector alpha (-T)^{-1}; integrals of alpha e^{T_i u} reduce to it
  const RowVector resolvent_row = ((-t_mat).transpose().partialPivLu().solve(alpha.transpose())).transpose();
  threads = resolve_thread_count(threads);

  const int n = static_cast<int>(obs.size());
  const int chunks = detail::chunk_count(n);
  std::vector<SufficientStats> partial(static_cast<size_t>(chunks));

  detail::parallel_chunks(n, threads, [&](int c, int b, int e) {
    using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    SufficientStats st = SufficientStats::zeros(levels_n, p);
    BlockExpEvaluator vanloan(t_mat, ones, alpha);
    Matrix exp_lo(p, p), int_lo(p, p), exp_hi(p, p), int_hi(p, p);
    RowMajor diff(levels_n, p * p);   // (e^{T lo/s_i} - e^{T hi/s_i}) per level, flattened
    RowMajor kdiff(levels_n, p * p);  // integral-block difference, hi minus lo
    std::vector<double> surv_diff(static_cast<size_t>(levels_n));
    for (int j = b; j < e; ++j) {
      const auto& o = obs[static_cast<size_t>(j)];
      const double w = o.weight;
      const bool finite_hi = std::isfinite(o.upper);
      for (int i = 0; i < levels_n; ++i) {
        if (pi[i] <= 0.0) {
          surv_diff[static_cast<size_t>(i)] = 0.0;
          continue;
        }
        vanloan.eval(o.lower / sup[i], exp_lo, int_lo);
        if (finite_hi) {
          vanloan.eval(o.upper / sup[i], exp_hi, int_hi);
        } else {
          exp_hi.setZero();
          int_hi.setZero();
        }
        Matrix d = exp_lo - exp_hi;
        Matrix kd = int_hi - int_lo;
        diff.row(i) = Eigen::Map<const RowVector>(d.data(), p * p);
        kdiff.row(i) = Eigen::Map<const RowVector>(kd.data(), p * p);
        surv_diff[static_cast<size_t>(i)] = std::max(0.0, static_cast<double>(alpha * d * ones));
      }
      double prob = 0.0;
      for (int i = 0; i < levels_n; ++i) prob += pi[i] * surv_diff[static_cast<size_t>(i)];
      if (!(prob > kIntervalProbFloor) || !std::isfinite(prob))
        throw NumericError("e_step_censored: interval (" + std::to_string(o.lower) + ", " +
                           (finite_hi ? std::to_string(o.upper) : std::string("inf")) +
                           "] carries no probability mass");
      st.loglik += w * std::log(prob);
      st.total_weight += w;
      for (int i = 0; i < levels_n; ++i) {
        if (pi[i] <= 0.0) continue;
        const double phi = w * pi[i] / prob;
        Eigen::Map<const Matrix> d(diff.row(i).data(), p, p);
        Eigen::Map<const Matrix> kd(kdiff.row(i).data(), p, p);
        st.level_counts(i) += phi * surv_diff[static_cast<size_t>(i)];
        Vector de = d * ones;
        RowVector intcol = resolvent_row * d;  // componentwise: integral over the level, /s_i
        st.init_counts.row(i) += phi * (alpha.array() * de.transpose().array()).matrix();
        for (int k = 0; k < p; ++k) {
          st.occupancy_scaled(k) += phi * std::max(0.0, intcol(k) - kd(k, k));
          st.exit_counts(k) += phi * exit(k) * std::max(0.0, intcol(k));
          for (int l = 0; l < p; ++l) {
            if (l == k) continue;
            st.jump_counts(k, l) += phi * t_mat(k, l) * std::max(0.0, intcol(k) - kd(l, k));
          }
        }
      }
    }
    partial[static_cast<size_t>(c)] = std::move(st);
  });

  SufficientStats stats = SufficientStats::zeros(levels_n, p);
  for (auto& part : partial) stats.add(part);
  return stats;
}

/// EM fit over a mixture of exact and censored observations; the censored
/// group contributes its own conditional expectations, summed componentwise
/// with the exact-data statistics before the shared M-step.
inline FitResult fit_censored(const Dataset& data, const ScalingFamily& fam, int p,
                              const EmConfig& cfg = {}) {
  detail::CensoredEStepFn fn = [](const NphModel& m, const std::vector<CensoredObservation>& o,
                                  int th) { return e_step_censored(m, o, th); };
  return detail::fit_driver(data, fam, p, cfg, &fn);
}

}  // namespace nphfit

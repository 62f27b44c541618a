#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "nphfit/common.hpp"
#include "nphfit/dataset.hpp"
#include "nphfit/nph_model.hpp"

namespace nphfit {

struct EmConfig {
  double rel_tol = 1e-8;
  int max_iters = 5000;
  int restarts = 10;
  std::uint64_t seed = 12345;
  double trunc_eps = 1e-12;
  std::vector<double> fix_theta;  // empty = theta is re-estimated
  int threads = 0;                // 0: NPHFIT_THREADS env, else hardware
};

inline int resolve_thread_count(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("NPHFIT_THREADS")) {
    int v = std::atoi(env);
    if (v > 0) return v;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

/// Conditional expectations of the latent-path statistics, aggregated over a
/// dataset. Level-resolved where the M-step needs resolution (level counts
/// drive the scaling update, initial-state counts feed alpha), otherwise
/// already summed over levels with the 1/s_i factors folded in.
struct SufficientStats {
  Vector level_counts;      // E(L^i), per level
  Matrix init_counts;       // E(B_k^i), levels x p
  Vector occupancy_scaled;  // sum_i E(Z_k^i)/s_i, per state
  Matrix jump_counts;       // sum_i E(N_{kl}^i), p x p, zero diagonal
  Vector exit_counts;       // sum_i E(N_k^i), per state
  double total_weight = 0.0;
  double loglik = 0.0;  // log likelihood of the data at the E-step parameters

  static SufficientStats zeros(int levels, int p) {
    SufficientStats s;
    s.level_counts = Vector::Zero(levels);
    s.init_counts = Matrix::Zero(levels, p);
    s.occupancy_scaled = Vector::Zero(p);
    s.jump_counts = Matrix::Zero(p, p);
    s.exit_counts = Vector::Zero(p);
    return s;
  }

  void add(const SufficientStats& o) {
    if (o.level_counts.size() != level_counts.size() ||
        o.init_counts.cols() != init_counts.cols())
      throw InvalidInputError("SufficientStats::add: shape mismatch");
    level_counts += o.level_counts;
    init_counts += o.init_counts;
    occupancy_scaled += o.occupancy_scaled;
    jump_counts += o.jump_counts;
    exit_counts += o.exit_counts;
    total_weight += o.total_weight;
    loglik += o.loglik;
  }

  std::vector<double> level_weights() const {
    return {level_counts.data(), level_counts.data() + level_counts.size()};
  }
};

struct FitDiagnostics {
  std::vector<std::string> warnings;
  int best_restart = -1;
  std::vector<double> restart_logliks;  // NaN marks a failed restart
};

struct FitResult {
  NphModel model;
  std::vector<double> loglik_trace;
  int iterations = 0;
  bool converged = false;
  FitDiagnostics diagnostics;
};

namespace detail {

inline constexpr int kEStepChunks = 64;

/// Fixed chunk layout with an in-order reduction: results do not depend on
/// how many workers actually run.
template <class ChunkFn>
inline void parallel_chunks(int n_items, int threads, const ChunkFn& process) {
  int chunks = std::min(kEStepChunks, n_items);
  if (chunks <= 0) return;
  threads = std::clamp(threads, 1, chunks);
  auto bounds = [&](int c) {
    int b = static_cast<int>(static_cast<long long>(c) * n_items / chunks);
    int e = static_cast<int>(static_cast<long long>(c + 1) * n_items / chunks);
    return std::pair<int, int>(b, e);
  };
  if (threads == 1) {
    for (int c = 0; c < chunks; ++c) {
      auto [b, e] = bounds(c);
      process(c, b, e);
    }
    return;
  }
  std::vector<std::exception_ptr> errors(static_cast<size_t>(chunks));
  std::atomic<int> next{0};
  auto worker = [&] {
    int c;
    while ((c = next.fetch_add(1)) < chunks) {
      try {
        auto [b, e] = bounds(c);
        process(c, b, e);
      } catch (...) {
        errors[static_cast<size_t>(c)] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(threads));
  for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  for (auto& ep : errors)
    if (ep) std::rethrow_exception(ep);
}

inline int chunk_count(int n_items) { return std::min(kEStepChunks, n_items); }

}  // namespace detail

/// E-step over exact weighted observations. One block exponential per
/// (observation, level) delivers e^{T y/s_i} and the convolution integral at
/// once. Level terms are kept in scaled form and combined by log-sum-exp, so
/// observations far in the tail of a poorly matched iterate cannot underflow
/// the mixture density; posterior factors are applied through split
/// exponentials because only the final products are bounded.
inline SufficientStats e_step(const NphModel& model,
                              const std::vector<WeightedObservation>& obs, int threads = 0) {
  if (obs.empty()) throw InvalidInputError("e_step: no observations");
  const int p = model.ph.order();
  const int levels_n = model.levels();
  const auto pi = model.scaling.pmf_table(levels_n);
  const auto sup = model.scaling.support_table(levels_n);
  std::vector<double> log_pi(pi.size()), log_sup(sup.size());
  for (int i = 0; i < levels_n; ++i) {
    log_pi[static_cast<size_t>(i)] = pi[i] > 0.0 ? std::log(pi[i]) : -kInf;
    log_sup[static_cast<size_t>(i)] = std::log(sup[i]);
  }
  const Vector exit = model.ph.exit_vector();
  const RowVector alpha = model.ph.alpha;
  const Matrix t_mat = model.ph.T;
  threads = resolve_thread_count(threads);

  const int n = static_cast<int>(obs.size());
  const int chunks = detail::chunk_count(n);
  std::vector<SufficientStats> partial(static_cast<size_t>(chunks));

  detail::parallel_chunks(n, threads, [&](int c, int b, int e) {
    SufficientStats st = SufficientStats::zeros(levels_n, p);
    BlockExpEvaluator vanloan(t_mat, exit, alpha);
    Matrix exp_part(p, p), integral(p, p);
    std::vector<double> log_term(static_cast<size_t>(levels_n));
    std::vector<double> log_scale(static_cast<size_t>(levels_n));
    Matrix rows(levels_n, p), cols(levels_n, p);
    Matrix jflat(levels_n, p * p);  // column-major J factor, one level per row
    for (int j = b; j < e; ++j) {
      const double y = obs[static_cast<size_t>(j)].y;
      const double w = obs[static_cast<size_t>(j)].weight;
      for (int i = 0; i < levels_n; ++i) {
        if (pi[i] <= 0.0) {
          log_term[static_cast<size_t>(i)] = -kInf;
          continue;
        }
        double ls = 0.0;
        vanloan.eval_scaled(y / sup[i], exp_part, integral, ls);
        rows.row(i) = alpha * exp_part;
        cols.row(i) = (exp_part * exit).transpose();
        jflat.row(i) = Eigen::Map<const RowVector>(integral.data(), p * p);
        log_scale[static_cast<size_t>(i)] = ls;
        double core = rows.row(i).dot(exit);
        log_term[static_cast<size_t>(i)] =
            core > 0.0
                ? log_pi[static_cast<size_t>(i)] + std::log(core) + ls - log_sup[static_cast<size_t>(i)]
                : -kInf;
      }
      const double log_f = log_sum_exp(log_term);
      if (log_f == -kInf || !std::isfinite(log_f))
        throw NumericError("e_step: zero density at observation y=" + std::to_string(y));
      st.loglik += w * log_f;
      st.total_weight += w;
      for (int i = 0; i < levels_n; ++i) {
        if (log_term[static_cast<size_t>(i)] - log_f < -290.0) continue;
        st.level_counts(i) += w * std::exp(log_term[static_cast<size_t>(i)] - log_f);
        // log of the posterior prefactor pi_i e^{ls} / (s_i f)
        const double lp = log_pi[static_cast<size_t>(i)] + log_scale[static_cast<size_t>(i)] -
                          log_sup[static_cast<size_t>(i)] - log_f;
        const double u = std::exp(0.5 * lp);
        const double wu = w * u;
        st.init_counts.row(i) +=
            (wu * (alpha.array() * cols.row(i).array()) * u).matrix();
        for (int k = 0; k < p; ++k) {
          st.occupancy_scaled(k) += wu * jflat(i, k * p + k) * u;
          st.exit_counts(k) += wu * rows(i, k) * exit(k) * u;
          for (int l = 0; l < p; ++l) {
            if (l == k) continue;
            // integral factor entry (l,k), column-major offset k*p+l
            st.jump_counts(k, l) += wu * jflat(i, k * p + l) * u * t_mat(k, l);
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

/// Closed-form M-step: alpha from initial-state counts, rates from jump and
/// exit counts over scaled occupancies, theta delegated to the family.
inline std::pair<ScalingFamily, PhaseTypeRep> m_step(const SufficientStats& stats,
                                                     const ScalingFamily& fam, int p) {
  if (!(stats.total_weight > 0.0)) throw InvalidInputError("m_step: empty statistics");
  ScalingFamily next_fam = fam;
  if (!fam.theta_fixed) {
    auto w = stats.level_weights();
    next_fam = fam.with_theta(fam.m_step(std::span<const double>(w)));
  }
  RowVector alpha = stats.init_counts.colwise().sum() / stats.total_weight;
  alpha = alpha.cwiseMax(0.0);
  alpha /= alpha.sum();
  Matrix t_mat = Matrix::Zero(p, p);
  for (int k = 0; k < p; ++k) {
    if (!(stats.occupancy_scaled(k) > 0.0))
      throw FitError("m_step: state " + std::to_string(k) +
                     " has zero occupancy (state starvation); try fewer phases or a different "
                     "restart");
    double diag = 0.0;
    for (int l = 0; l < p; ++l) {
      if (l == k) continue;
      t_mat(k, l) = stats.jump_counts(k, l) / stats.occupancy_scaled(k);
      diag += t_mat(k, l);
    }
    double exit_rate = stats.exit_counts(k) / stats.occupancy_scaled(k);
    t_mat(k, k) = -(diag + exit_rate);
  }
  return {next_fam, validate(alpha, t_mat)};
}

namespace detail {

struct SingleRun {
  NphModel model;
  std::vector<double> trace;
  int m_steps = 0;
  bool converged = false;
};

/// Generic EM loop: `step` evaluates the log likelihood at the current
/// parameters and returns the re-estimated model. The returned model is the
/// one whose likelihood closes the trace.
template <class StepFn>
inline SingleRun em_iterate(NphModel start, const EmConfig& cfg, const StepFn& step) {
  SingleRun run;
  run.model = std::move(start);
  double prev = 0.0;
  for (int iter = 0; iter <= cfg.max_iters; ++iter) {
    auto [ll, next_model] = step(run.model);
    run.trace.push_back(ll);
    if (iter > 0 && std::abs(ll - prev) <= cfg.rel_tol * std::abs(prev)) {
      run.converged = true;
      break;
    }
    prev = ll;
    if (iter == cfg.max_iters) break;
    run.model = std::move(next_model);
    ++run.m_steps;
  }
  return run;
}

inline ScalingFamily restart_family(const ScalingFamily& base, const EmConfig& cfg,
                                    std::uint64_t restart_seed) {
  if (base.theta_fixed) return base;
  ScalingFamily fam = base;
  if (!cfg.fix_theta.empty()) {
    fam = base.with_theta(cfg.fix_theta);
    fam.theta_fixed = true;
    return fam;
  }
  Rng rng(derive_seed(restart_seed, 0));
  return base.with_theta(base.random_start(rng));
}

using CensoredEStepFn =
    std::function<SufficientStats(const NphModel&, const std::vector<CensoredObservation>&, int)>;

/// Restart wrapper shared by the exact, censored and distribution-target
/// entry points.
inline FitResult fit_driver(const Dataset& data, const ScalingFamily& fam, int p,
                            const EmConfig& cfg, const CensoredEStepFn* censored_step) {
  data.check();
  if (!censored_step && !data.censored.empty())
    throw InvalidInputError("fit: dataset has censored observations; use fit_censored");
  if (!censored_step && data.exact.empty())
    throw InvalidInputError("fit: requires at least one exact observation");
  if (p < 1) throw InvalidInputError("fit: phases must be >= 1");

  const auto exact = collapse_duplicates(data.exact);
  const double scale = data_scale(data);
  const int threads = resolve_thread_count(cfg.threads);

  FitResult best;
  bool have_best = false;
  FitDiagnostics diag;
  diag.restart_logliks.assign(static_cast<size_t>(std::max(1, cfg.restarts)),
                              std::numeric_limits<double>::quiet_NaN());
  bool cap_noted = false;

  const int restarts = std::max(1, cfg.restarts);
  for (int r = 0; r < restarts; ++r) {
    const std::uint64_t seed_r = derive_seed(cfg.seed, static_cast<std::uint64_t>(r));
    try {
      ScalingFamily fam_r = restart_family(fam, cfg, seed_r);
      PhaseTypeRep ph0 = random_init(p, derive_seed(seed_r, 1), scale);
      NphModel start{fam_r, ph0, cfg.trunc_eps};
      auto step = [&](const NphModel& m) -> std::pair<double, NphModel> {
        bool capped = false;
        (void)m.levels(&capped);
        if (capped && !cap_noted) {
          diag.warnings.push_back("level truncation capped at " +
                                  std::to_string(m.scaling.level_cap) +
                                  " before reaching trunc_eps mass");
          cap_noted = true;
        }
        SufficientStats stats;
        if (!exact.empty()) {
          stats = e_step(m, exact, threads);
          if (censored_step && !data.censored.empty())
            stats.add((*censored_step)(m, data.censored, threads));
        } else {
          stats = (*censored_step)(m, data.censored, threads);
        }
        auto [next_fam, next_ph] = m_step(stats, m.scaling, p);
        return {stats.loglik, NphModel{next_fam, next_ph, cfg.trunc_eps}};
      };
      SingleRun run = em_iterate(start, cfg, step);
      diag.restart_logliks[static_cast<size_t>(r)] = run.trace.back();
      if (!have_best || run.trace.back() > best.loglik_trace.back()) {
        best.model = run.model;
        best.loglik_trace = run.trace;
        best.iterations = run.m_steps;
        best.converged = run.converged;
        diag.best_restart = r;
        have_best = true;
      }
    } catch (const Error& e) {
      diag.warnings.push_back("restart " + std::to_string(r) + " failed: " + e.what());
    }
  }
  if (!have_best) {
    std::string detail = "fit: all restarts failed";
    for (const auto& w : diag.warnings) detail += "\n  " + w;
    throw FitError(detail);
  }
  best.diagnostics = std::move(diag);
  return best;
}

}  // namespace detail

/// EM fit over exact (possibly weighted) observations with independent
/// random restarts; the run with the highest final log likelihood wins.
inline FitResult fit(const Dataset& data, const ScalingFamily& fam, int p,
                     const EmConfig& cfg = {}) {
  return detail::fit_driver(data, fam, p, cfg, nullptr);
}

/// Specialized fast path when the phase-type part is Erlang(q, lambda): level
/// densities are scalar, so the E-step vectorizes over levels with no matrix
/// exponentials.
inline FitResult fit_erlang_mixture(const Dataset& data, const ScalingFamily& fam, int q,
                                    const EmConfig& cfg = {}) {
  data.check();
  if (!data.censored.empty())
    throw InvalidInputError("fit_erlang_mixture: censored data is not supported here");
  if (q < 1) throw InvalidInputError("fit_erlang_mixture: q must be >= 1");

  const auto exact = collapse_duplicates(data.exact);
  const int n = static_cast<int>(exact.size());
  const double scale = data_scale(data);
  const int threads = resolve_thread_count(cfg.threads);
  const double lgamma_q = std::lgamma(static_cast<double>(q));

  FitResult best;
  bool have_best = false;
  FitDiagnostics diag;
  const int restarts = std::max(1, cfg.restarts);
  diag.restart_logliks.assign(static_cast<size_t>(restarts),
                              std::numeric_limits<double>::quiet_NaN());
  bool cap_noted = false;

  for (int r = 0; r < restarts; ++r) {
    const std::uint64_t seed_r = derive_seed(cfg.seed, static_cast<std::uint64_t>(r));
    try {
      ScalingFamily fam_r = detail::restart_family(fam, cfg, seed_r);
      Rng rng(derive_seed(seed_r, 1));
      double lambda0 = static_cast<double>(q) / scale * rng.uniform(0.5, 2.0);
      NphModel start{fam_r, erlang(q, lambda0), cfg.trunc_eps};

      auto step = [&](const NphModel& m) -> std::pair<double, NphModel> {
        bool capped = false;
        const int levels_n = m.levels(&capped);
        if (capped && !cap_noted) {
          diag.warnings.push_back("level truncation capped at " +
                                  std::to_string(m.scaling.level_cap) +
                                  " before reaching trunc_eps mass");
          cap_noted = true;
        }
        const double lambda = -m.ph.T(0, 0);
        const auto pi = m.scaling.pmf_table(levels_n);
        const auto sup = m.scaling.support_table(levels_n);
        Eigen::ArrayXd base(levels_n), inv_s(levels_n);
        const double log_lambda = std::log(lambda);
        for (int i = 0; i < levels_n; ++i) {
          inv_s(i) = 1.0 / sup[i];
          base(i) = pi[i] > 0.0 ? std::log(pi[i]) + q * (log_lambda - std::log(sup[i])) : -kInf;
        }
        const int chunks = detail::chunk_count(n);
        std::vector<Eigen::ArrayXd> part_l(static_cast<size_t>(chunks)),
            part_z(static_cast<size_t>(chunks));
        std::vector<double> part_ll(static_cast<size_t>(chunks), 0.0);
        detail::parallel_chunks(n, threads, [&](int c, int b, int e) {
          Eigen::ArrayXd lsum = Eigen::ArrayXd::Zero(levels_n);
          Eigen::ArrayXd zsum = Eigen::ArrayXd::Zero(levels_n);
          Eigen::ArrayXd terms(levels_n), post(levels_n);
          double ll = 0.0;
          for (int j = b; j < e; ++j) {
            const double y = exact[static_cast<size_t>(j)].y;
            const double w = exact[static_cast<size_t>(j)].weight;
            terms = base - lambda * y * inv_s;
            double mx = terms.maxCoeff();
            if (mx == -kInf)
              throw NumericError("fit_erlang_mixture: density underflow at y=" +
                                 std::to_string(y));
            post = (terms - mx).exp();
            double norm = post.sum();
            if (!(norm > 0.0) || !std::isfinite(norm))
              throw NumericError("fit_erlang_mixture: density underflow at y=" +
                                 std::to_string(y));
            post /= norm;
            ll += w * (mx + std::log(norm) + (q - 1) * std::log(y) - lgamma_q);
            lsum += w * post;
            zsum += (w * y) * post;
          }
          part_l[static_cast<size_t>(c)] = std::move(lsum);
          part_z[static_cast<size_t>(c)] = std::move(zsum);
          part_ll[static_cast<size_t>(c)] = ll;
        });
        Eigen::ArrayXd level_w = Eigen::ArrayXd::Zero(levels_n);
        Eigen::ArrayXd level_z = Eigen::ArrayXd::Zero(levels_n);
        double ll = 0.0;
        for (int c = 0; c < chunks; ++c) {
          level_w += part_l[static_cast<size_t>(c)];
          level_z += part_z[static_cast<size_t>(c)];
          ll += part_ll[static_cast<size_t>(c)];
        }
        const double total_w = level_w.sum();
        double lambda_next = q * total_w / (level_z * inv_s).sum();
        ScalingFamily next_fam = m.scaling;
        if (!m.scaling.theta_fixed) {
          std::vector<double> w_vec(level_w.data(), level_w.data() + levels_n);
          next_fam = m.scaling.with_theta(m.scaling.m_step(std::span<const double>(w_vec)));
        }
        return {ll, NphModel{next_fam, erlang(q, lambda_next), cfg.trunc_eps}};
      };
      detail::SingleRun run = detail::em_iterate(start, cfg, step);
      diag.restart_logliks[static_cast<size_t>(r)] = run.trace.back();
      if (!have_best || run.trace.back() > best.loglik_trace.back()) {
        best.model = run.model;
        best.loglik_trace = run.trace;
        best.iterations = run.m_steps;
        best.converged = run.converged;
        diag.best_restart = r;
        have_best = true;
      }
    } catch (const Error& e) {
      diag.warnings.push_back("restart " + std::to_string(r) + " failed: " + e.what());
    }
  }
  if (!have_best) {
    std::string detail = "fit_erlang_mixture: all restarts failed";
    for (const auto& w : diag.warnings) detail += "\n  " + w;
    throw FitError(detail);
  }
  best.diagnostics = std::move(diag);
  return best;
}

}  // namespace nphfit

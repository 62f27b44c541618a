#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "nphfit/em_fit.hpp"
#include "test_util.hpp"

using namespace nphfit;

namespace {

ScalingFamily single_level_family() {
  auto fam = ScalingFamily::geometric_pareto(1.0, 700.0);
  fam.theta_fixed = true;
  return fam;
}

void check_monotone(const std::vector<double>& trace) {
  for (size_t i = 1; i < trace.size(); ++i)
    CHECK(trace[i] >= trace[i - 1] - 1e-9 * std::abs(trace[i - 1]));
}

}  // namespace

TEST_CASE("e_step identities") {
  SUBCASE("posterior level mass sums to the data weight") {
    NphModel m{ScalingFamily::geometric_pareto(1.0, 1.2), random_init(2, 50, 1.0), 1e-12};
    std::vector<WeightedObservation> obs = {{1.7, 1.0}};
    auto st = e_step(m, obs, 1);
    CHECK(st.level_counts.sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(st.init_counts.sum() == doctest::Approx(1.0).epsilon(1e-12));

    std::vector<WeightedObservation> many = {{0.5, 1.0}, {2.0, 2.5}, {9.0, 0.5}};
    auto st2 = e_step(m, many, 1);
    CHECK(st2.level_counts.sum() == doctest::Approx(4.0).epsilon(1e-10));
    CHECK(st2.init_counts.sum() == doctest::Approx(4.0).epsilon(1e-10));
  }
  SUBCASE("fully observed path in dimension one") {
    NphModel m{single_level_family(), erlang(1, 0.7), 1e-12};
    std::vector<WeightedObservation> obs = {{3.1, 1.0}};
    auto st = e_step(m, obs, 1);
    CHECK(st.occupancy_scaled(0) == doctest::Approx(3.1).epsilon(1e-12));
    CHECK(st.exit_counts(0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(st.init_counts.sum() == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("occupation times partition each absorption time (single level)") {
    NphModel m{single_level_family(), random_init(3, 4, 1.0), 1e-12};
    std::vector<WeightedObservation> obs = {{0.9, 1.0}, {2.2, 3.0}};
    auto st = e_step(m, obs, 1);
    CHECK(st.occupancy_scaled.sum() == doctest::Approx(0.9 + 3.0 * 2.2).epsilon(1e-10));
  }
  SUBCASE("duplicated point equals a weighted point") {
    NphModel m{ScalingFamily::zeta(2.5), random_init(2, 8, 1.0), 1e-10};
    m.scaling.level_cap = 300;
    std::vector<WeightedObservation> dup = {{1.4, 1.0}, {1.4, 1.0}};
    std::vector<WeightedObservation> wtd = {{1.4, 2.0}};
    auto a = e_step(m, dup, 1);
    auto b = e_step(m, wtd, 1);
    CHECK((a.level_counts - b.level_counts).cwiseAbs().maxCoeff() <
          1e-14 * b.level_counts.cwiseAbs().maxCoeff());
    CHECK((a.jump_counts - b.jump_counts).cwiseAbs().maxCoeff() <=
          1e-14 * std::max(1.0, b.jump_counts.cwiseAbs().maxCoeff()));
    CHECK(a.loglik == doctest::Approx(b.loglik).epsilon(1e-14));
  }
  SUBCASE("deep-tail points survive through the scaled level terms") {
    NphModel m{single_level_family(), erlang(1, 1.0), 1e-12};
    std::vector<WeightedObservation> obs = {{1e6, 1.0}};
    auto st = e_step(m, obs, 1);
    CHECK(st.loglik == doctest::Approx(-1e6 + std::log(1.0)).epsilon(1e-10));
    CHECK(st.occupancy_scaled(0) == doctest::Approx(1e6).epsilon(1e-10));
  }
  SUBCASE("zero density raises a numeric error") {
    NphModel m{single_level_family(), erlang(2, 1.0), 1e-12};
    std::vector<WeightedObservation> obs = {{0.0, 1.0}};
    CHECK_THROWS_AS(e_step(m, obs, 1), NumericError);
  }
}

TEST_CASE("m_step closed forms") {
  SUBCASE("exponential maximum likelihood") {
    SufficientStats st = SufficientStats::zeros(1, 1);
    st.level_counts(0) = 1.0;
    st.init_counts(0, 0) = 1.0;
    st.occupancy_scaled(0) = 2.5;  // E(Z) = y
    st.exit_counts(0) = 1.0;
    st.total_weight = 1.0;
    auto [fam, ph] = m_step(st, single_level_family(), 1);
    CHECK(ph.T(0, 0) == doctest::Approx(-1.0 / 2.5).epsilon(1e-14));
  }
  SUBCASE("initial mass concentrated on state one") {
    SufficientStats st = SufficientStats::zeros(2, 3);
    st.level_counts << 1.0, 1.0;
    st.init_counts.setZero();
    st.init_counts(0, 0) = 2.0;
    st.occupancy_scaled << 1.0, 1.0, 1.0;
    st.jump_counts.setZero();
    st.exit_counts << 0.5, 0.5, 0.5;
    st.total_weight = 2.0;
    auto [fam, ph] = m_step(st, ScalingFamily::geometric_pareto(1.0, 1.0), 3);
    CHECK(ph.alpha(0) == doctest::Approx(1.0));
    CHECK(ph.alpha(1) == doctest::Approx(0.0));
    // no observed jumps: T is diagonal plus exit
    CHECK(ph.T(0, 1) == 0.0);
    CHECK(ph.T(1, 2) == 0.0);
    CHECK(ph.T(0, 0) == doctest::Approx(-0.5));
  }
  SUBCASE("state starvation") {
    SufficientStats st = SufficientStats::zeros(1, 2);
    st.level_counts(0) = 1.0;
    st.init_counts(0, 0) = 1.0;
    st.occupancy_scaled << 1.0, 0.0;
    st.exit_counts << 1.0, 0.0;
    st.total_weight = 1.0;
    CHECK_THROWS_AS(m_step(st, single_level_family(), 2), FitError);
  }
}

TEST_CASE("fit on constant data solves in one step") {
  Dataset data;
  for (int i = 0; i < 30; ++i) data.exact.push_back({2.5, 1.0});
  EmConfig cfg;
  cfg.restarts = 1;
  cfg.threads = 1;
  auto res = fit(data, single_level_family(), 1, cfg);
  CHECK(res.converged);
  CHECK(res.iterations <= 2);
  CHECK(res.model.ph.T(0, 0) == doctest::Approx(-0.4).epsilon(1e-12));
}

TEST_CASE("fit rejects censored datasets and empty input") {
  Dataset data;
  data.censored.push_back({1.0, 2.0, 1.0});
  CHECK_THROWS_AS(fit(data, ScalingFamily::zeta(2.0), 1, EmConfig{}), InvalidInputError);
  Dataset empty;
  CHECK_THROWS_AS(fit(empty, ScalingFamily::zeta(2.0), 1, EmConfig{}), ValidationError);
}

TEST_CASE("monotone likelihood and self-consistency at the fixed point") {
  NphModel truth{ScalingFamily::geometric_pareto(1.0, 1.4), erlang(2, 2.0), 1e-12};
  Dataset data;
  for (double y : truth.simulate(400, 321)) data.exact.push_back({y, 1.0});

  EmConfig cfg;
  cfg.restarts = 2;
  cfg.max_iters = 4000;
  cfg.rel_tol = 1e-12;  // drive the run to an actual fixed point
  auto res = fit(data, ScalingFamily::geometric_pareto(1.0, 1.0), 2, cfg);
  check_monotone(res.loglik_trace);
  CHECK(res.converged);

  // one extra cycle moves nothing
  auto exact = collapse_duplicates(data.exact);
  auto st = e_step(res.model, exact, 1);
  auto [fam2, ph2] = m_step(st, res.model.scaling, 2);
  CHECK(std::abs(fam2.theta[0] - res.model.scaling.theta[0]) < 1e-6);
  CHECK((ph2.alpha - res.model.ph.alpha).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((ph2.T - res.model.ph.T).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("monotone likelihood across the other families") {
  NphModel truth{ScalingFamily::geometric_pareto(0.5, 1.8), erlang(1, 1.0), 1e-12};
  auto draws = truth.simulate(200, 99);
  Dataset data;
  for (double y : draws) data.exact.push_back({y, 1.0});

  std::vector<ScalingFamily> fams = {ScalingFamily::zeta(2.0),
                                     ScalingFamily::discretized_weibull(1.0, 1.0, 1.0),
                                     ScalingFamily::discretized_lognormal(0.0, 1.0)};
  for (auto& fam : fams) {
    fam.level_cap = 300;
    EmConfig cfg;
    cfg.restarts = 1;
    cfg.max_iters = 50;
    auto res = fit(data, fam, 2, cfg);
    check_monotone(res.loglik_trace);
  }
}

TEST_CASE("weighted and raw fits produce identical traces") {
  NphModel truth{ScalingFamily::geometric_pareto(1.0, 1.5), erlang(1, 1.0), 1e-12};
  auto draws = truth.simulate(150, 2024);
  Dataset raw;
  for (double y : draws) {
    raw.exact.push_back({y, 1.0});
    raw.exact.push_back({y, 1.0});  // every point duplicated
  }
  Dataset collapsed;
  for (double y : draws) collapsed.exact.push_back({y, 2.0});

  EmConfig cfg;
  cfg.restarts = 2;
  cfg.max_iters = 300;
  auto a = fit(raw, ScalingFamily::geometric_pareto(1.0, 1.0), 1, cfg);
  auto b = fit(collapsed, ScalingFamily::geometric_pareto(1.0, 1.0), 1, cfg);
  REQUIRE(a.loglik_trace.size() == b.loglik_trace.size());
  for (size_t i = 0; i < a.loglik_trace.size(); ++i)
    CHECK(std::abs(a.loglik_trace[i] - b.loglik_trace[i]) < 1e-10);
}

TEST_CASE("scale equivariance") {
  NphModel truth{ScalingFamily::geometric_pareto(1.0, 1.5), erlang(2, 3.0), 1e-12};
  auto draws = truth.simulate(250, 777);
  for (double gamma : {2.0, 3.7}) {
    Dataset base, scaled;
    for (double y : draws) {
      base.exact.push_back({y, 1.0});
      scaled.exact.push_back({gamma * y, 1.0});
    }
    EmConfig cfg;
    cfg.restarts = 1;
    cfg.max_iters = 400;
    auto fa = fit(base, ScalingFamily::geometric_pareto(1.0, 1.0), 2, cfg);
    auto fb = fit(scaled, ScalingFamily::geometric_pareto(1.0, 1.0), 2, cfg);
    for (double y : {0.5, 1.0, 2.0, 5.0, 12.0}) {
      double lhs = fb.model.density(y);
      double rhs = fa.model.density(y / gamma) / gamma;
      CHECK(std::abs(lhs - rhs) < 1e-4 * std::max(1.0, rhs));
    }
  }
}

TEST_CASE("theta can be frozen") {
  NphModel truth{ScalingFamily::geometric_pareto(1.0, 1.5), erlang(1, 1.0), 1e-12};
  Dataset data;
  for (double y : truth.simulate(200, 5)) data.exact.push_back({y, 1.0});
  EmConfig cfg;
  cfg.restarts = 1;
  cfg.max_iters = 200;
  cfg.fix_theta = {1.45};
  auto res = fit(data, ScalingFamily::geometric_pareto(1.0, 1.0), 1, cfg);
  CHECK(res.model.scaling.theta[0] == doctest::Approx(1.45));
  CHECK(res.model.scaling.theta_fixed);
}

TEST_CASE("erlang fast path agrees with the general algorithm at q=1") {
  NphModel truth{ScalingFamily::geometric_pareto(1.0, 1.3), erlang(1, 1.0), 1e-12};
  Dataset data;
  for (double y : truth.simulate(500, 31031)) data.exact.push_back({y, 1.0});

  EmConfig cfg;
  cfg.restarts = 3;
  cfg.rel_tol = 1e-11;
  cfg.max_iters = 6000;
  auto fam = ScalingFamily::geometric_pareto(1.0, 1.0);
  auto general = fit(data, fam, 1, cfg);
  auto special = fit_erlang_mixture(data, fam, 1, cfg);
  CHECK(general.converged);
  CHECK(special.converged);
  CHECK(std::abs(general.loglik_trace.back() - special.loglik_trace.back()) < 1e-6);
  check_monotone(special.loglik_trace);
}

TEST_CASE("erlang mixture recovers simulated parameters") {
  NphModel truth{ScalingFamily::zeta(2.0), erlang(1, 1.0), 1e-12};
  Dataset data;
  for (double y : truth.simulate(1000, 8888)) data.exact.push_back({y, 1.0});
  auto fam = ScalingFamily::zeta(2.0);
  fam.level_cap = 800;
  EmConfig cfg;
  cfg.restarts = 2;
  cfg.max_iters = 2000;
  auto res = fit_erlang_mixture(data, fam, 1, cfg);
  double lambda_hat = -res.model.ph.T(0, 0);
  CHECK(std::abs(lambda_hat - 1.0) < 0.35);
  CHECK(std::abs(res.model.scaling.theta[0] - 2.0) < 0.45);
}

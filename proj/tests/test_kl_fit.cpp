#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "nphfit/data_io.hpp"
#include "nphfit/kl_fit.hpp"
#include "test_util.hpp"

using namespace nphfit;

namespace {

ScalingFamily single_level_family() {
  auto fam = ScalingFamily::geometric_pareto(1.0, 700.0);
  fam.theta_fixed = true;
  return fam;
}

double cross_entropy_of_target(const TargetDistribution& h, int k_nodes) {
  double acc = 0.0;
  for (const auto& [u, w] : quadrature_nodes(k_nodes)) acc += w * std::log(h.density(h.quantile(u)));
  return acc;
}

}  // namespace

TEST_CASE("midpoint quadrature nodes") {
  auto one = quadrature_nodes(1);
  REQUIRE(one.size() == 1);
  CHECK(one[0].first == doctest::Approx(0.5));
  CHECK(one[0].second == doctest::Approx(1.0));

  auto four = quadrature_nodes(4);
  std::vector<double> expect = {0.125, 0.375, 0.625, 0.875};
  for (int i = 0; i < 4; ++i) {
    CHECK(four[static_cast<size_t>(i)].first == doctest::Approx(expect[static_cast<size_t>(i)]));
    CHECK(four[static_cast<size_t>(i)].second == doctest::Approx(0.25));
  }

  double integral = 0.0;
  for (const auto& [u, w] : quadrature_nodes(1000)) integral += w * u;
  CHECK(std::abs(integral - 0.5) < 1e-7);
}

TEST_CASE("target quantiles, densities and cdfs") {
  auto wb = TargetDistribution::weibull(1.0, 0.5);
  CHECK(wb.quantile(1.0 - std::exp(-1.0)) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(wb.density(1.0) == doctest::Approx(std::exp(-1.0) / 2.0).epsilon(1e-12));
  CHECK(wb.cdf(wb.quantile(0.3)) == doctest::Approx(0.3).epsilon(1e-10));

  auto lg = TargetDistribution::log_gamma(2.0, 2.0);
  for (double u : {0.05, 0.4, 0.9}) CHECK(lg.cdf(lg.quantile(u)) == doctest::Approx(u).epsilon(1e-9));
  // density integrates to cdf
  double mass = testutil::integrate([&](double x) { return lg.density(x); }, 0.0, 5.0, 1e-10);
  CHECK(mass == doctest::Approx(lg.cdf(5.0)).epsilon(1e-8));

  auto ln = TargetDistribution::lognormal(0.0, 1.0);
  CHECK(ln.quantile(0.5) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(ln.cdf(1.0) == doctest::Approx(0.5).epsilon(1e-10));

  auto tab = TargetDistribution::tabulated({{0.1, 1.0}, {0.5, 2.0}, {0.9, 4.0}});
  CHECK(tab.quantile(0.3) == doctest::Approx(1.5));
  CHECK(tab.cdf(3.0) == doctest::Approx(0.7));
  CHECK_THROWS_AS(TargetDistribution::tabulated({{0.5, 2.0}, {0.4, 3.0}}), ValidationError);
  CHECK_THROWS_AS(TargetDistribution::weibull(-1.0, 0.5), ParameterDomainError);
}

TEST_CASE("target spec parsing") {
  auto lg = parse_target_spec("loggamma:alpha=2,beta=2");
  CHECK(lg.kind == TargetDistribution::Kind::LogGamma);
  auto wb = parse_target_spec("weibull:lambda=1,p=0.5");
  CHECK(wb.b == doctest::Approx(0.5));
  auto ln = parse_target_spec("lognormal:mu=0,sigma=1");
  CHECK(ln.kind == TargetDistribution::Kind::Lognormal);
  CHECK_THROWS_AS(parse_target_spec("cauchy:x=1"), ParseError);
  CHECK_THROWS_AS(parse_target_spec("weibull:lambda=zzz"), ParseError);
}

TEST_CASE("self-fit of an exponential target") {
  auto target = TargetDistribution::weibull(1.0, 1.0);  // Exp(1)
  EmConfig cfg;
  cfg.restarts = 2;
  cfg.max_iters = 500;
  auto res = fit_distribution(target, single_level_family(), 1, 20000, cfg);
  CHECK(res.converged);
  double lambda_hat = -res.model.ph.T(0, 0);
  CHECK(std::abs(lambda_hat - 1.0) < 1e-3);
  CHECK(std::abs(res.loglik_trace.back() - (-1.0)) < 1e-4);
}

TEST_CASE("monotone cross-entropy, KL nonnegativity and quadrature refinement") {
  auto target = TargetDistribution::log_gamma(2.0, 2.0);
  auto fam = ScalingFamily::geometric_pareto(1.0, 1.0);
  EmConfig cfg;
  cfg.restarts = 2;
  cfg.max_iters = 3000;
  auto res2000 = fit_distribution(target, fam, 1, 2000, cfg);
  for (size_t i = 1; i < res2000.loglik_trace.size(); ++i)
    CHECK(res2000.loglik_trace[i] >=
          res2000.loglik_trace[i - 1] - 1e-9 * std::abs(res2000.loglik_trace[i - 1]));

  double target_entropy_term = cross_entropy_of_target(target, 2000);
  CHECK(target_entropy_term - res2000.loglik_trace.back() >= -1e-6);

  auto res4000 = fit_distribution(target, fam, 1, 4000, cfg);
  CHECK(std::abs(res4000.loglik_trace.back() - res2000.loglik_trace.back()) < 1e-3);
}

TEST_CASE("bad quantiles surface as errors") {
  CHECK_THROWS_AS(fit_distribution(TargetDistribution::weibull(1.0, 1.0),
                                   ScalingFamily::zeta(2.0), 1, 0, EmConfig{}),
                  InvalidInputError);
  auto tab = TargetDistribution::tabulated({{0.1, 1.0}, {0.9, 2.0}});
  CHECK_THROWS_AS(tab.quantile(1.5), InvalidInputError);
}

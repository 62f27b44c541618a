#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nphfit/nphfit.hpp"

namespace {

using namespace nphfit;

struct CommonFitFlags {
  std::string family_spec;
  int phases = 1;
  std::string out_stem;
  double rel_tol = 1e-8;
  int max_iters = 5000;
  int restarts = 10;
  std::uint64_t seed = 12345;
  double trunc_eps = 1e-12;
  std::vector<double> fix_theta;
  std::string bin_spec;  // "T:K"
};

void add_common_fit_flags(CLI::App* cmd, CommonFitFlags& f, bool with_bin) {
  cmd->add_option("--family", f.family_spec, "scaling family spec")->required();
  cmd->add_option("--phases", f.phases, "number of phases p")->required()
      ->check(CLI::PositiveNumber);
  cmd->add_option("--out", f.out_stem, "output stem")->required();
  cmd->add_option("--rel-tol", f.rel_tol, "relative log-likelihood tolerance");
  cmd->add_option("--max-iters", f.max_iters, "iteration cap per restart");
  cmd->add_option("--restarts", f.restarts, "number of random restarts");
  cmd->add_option("--seed", f.seed, "master seed");
  cmd->add_option("--trunc-eps", f.trunc_eps, "level-series truncation mass");
  cmd->add_option("--fix-theta", f.fix_theta,
                  "freeze the scaling parameters at the given value(s)")
      ->delimiter(',');
  if (with_bin)
    cmd->add_option("--bin", f.bin_spec, "body/tail reduction as T:K (split point, bin count)");
}

EmConfig make_config(const CommonFitFlags& f) {
  EmConfig cfg;
  cfg.rel_tol = f.rel_tol;
  cfg.max_iters = f.max_iters;
  cfg.restarts = f.restarts;
  cfg.seed = f.seed;
  cfg.trunc_eps = f.trunc_eps;
  cfg.fix_theta = f.fix_theta;
  return cfg;
}

std::pair<double, int> parse_bin_spec(const std::string& spec) {
  auto colon = spec.find(':');
  if (colon == std::string::npos)
    throw ParseError("--bin expects T:K, got '" + spec + "'");
  try {
    double t = std::stod(spec.substr(0, colon));
    int k = std::stoi(spec.substr(colon + 1));
    if (!(t > 0.0) || k < 1) throw ParseError("--bin expects T>0 and K>=1");
    return {t, k};
  } catch (const std::exception&) {
    throw ParseError("--bin expects T:K, got '" + spec + "'");
  }
}

double curve_extent(const Dataset& data) {
  std::vector<WeightedObservation> rep = data.exact;
  for (const auto& o : data.censored) {
    double v = std::isfinite(o.upper) ? o.upper : o.lower;
    if (v > 0.0) rep.push_back({v, o.weight});
  }
  return 2.0 * weighted_quantile(std::move(rep), 0.99);
}

void print_theta(const NphModel& m) {
  std::printf("family %s theta =", family_spec_string(m.scaling).c_str());
  for (double v : m.scaling.theta) std::printf(" %.6g", v);
  std::printf("%s\n", m.scaling.theta_fixed ? " (fixed)" : "");
}

int finish_fit(const FitResult& res, const CommonFitFlags& flags, const Dataset& data) {
  ModelMetadata meta{res.loglik_trace.back(), res.iterations, res.converged};
  save_model(res.model, flags.out_stem + ".nph", meta);
  write_trace(res.loglik_trace, flags.out_stem);
  write_curves(res.model, flags.out_stem, curve_extent(data));
  for (const auto& w : res.diagnostics.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  std::printf("final loglik %.10g after %d iterations (restart %d)\n", res.loglik_trace.back(),
              res.iterations, res.diagnostics.best_restart);
  print_theta(res.model);
  if (!res.converged) {
    std::fprintf(stderr, "warning: iteration cap reached before convergence\n");
    return 2;
  }
  return 0;
}

int cmd_fit(const CommonFitFlags& flags, const std::string& data_path, int erlang_q) {
  Dataset data = load_csv(data_path, CsvKind::Exact);
  if (!flags.bin_spec.empty()) {
    auto [t_split, k_bins] = parse_bin_spec(flags.bin_spec);
    data = bin_body_tail(data, t_split, k_bins);
  }
  ScalingFamily fam = parse_family_spec(flags.family_spec);
  EmConfig cfg = make_config(flags);
  FitResult res = erlang_q > 0 ? fit_erlang_mixture(data, fam, erlang_q, cfg)
                               : fit(data, fam, flags.phases, cfg);
  return finish_fit(res, flags, data);
}

int cmd_fit_censored(const CommonFitFlags& flags, const std::string& exact_path,
                     const std::string& censored_path) {
  Dataset data;
  if (!censored_path.empty()) data = load_csv(censored_path, CsvKind::Censored);
  if (!exact_path.empty()) {
    Dataset ex = load_csv(exact_path, CsvKind::Exact);
    if (!flags.bin_spec.empty()) {
      auto [t_split, k_bins] = parse_bin_spec(flags.bin_spec);
      ex = bin_body_tail(ex, t_split, k_bins);
    }
    data.exact = std::move(ex.exact);
    data.provenance += (data.provenance.empty() ? "" : "+") + ex.provenance;
  }
  ScalingFamily fam = parse_family_spec(flags.family_spec);
  FitResult res = fit_censored(data, fam, flags.phases, make_config(flags));
  return finish_fit(res, flags, data);
}

int cmd_fit_dist(const CommonFitFlags& flags, const std::string& target_spec, int nodes) {
  TargetDistribution target = parse_target_spec(target_spec);
  ScalingFamily fam = parse_family_spec(flags.family_spec);
  FitResult res = fit_distribution(target, fam, flags.phases, nodes, make_config(flags));
  Dataset pseudo;
  for (const auto& [u, w] : quadrature_nodes(nodes)) pseudo.exact.push_back({target.quantile(u), w});
  double extent = curve_extent(pseudo);
  int code = finish_fit(res, flags, pseudo);
  write_target_curves(target, flags.out_stem, extent);
  return code;
}

int cmd_simulate(const std::string& model_path, int n, std::uint64_t seed) {
  NphModel model = load_model(model_path);
  auto draws = model.simulate(n, seed);
  std::printf("y\n");
  for (double v : draws) std::printf("%.17g\n", v);
  return 0;
}

int cmd_eval(const std::string& model_path, const std::vector<double>& at,
             const std::vector<double>& quantiles) {
  NphModel model = load_model(model_path);
  if (at.empty() && quantiles.empty())
    throw ParseError("eval: provide --at and/or --quantile values");
  if (!at.empty()) {
    std::printf("y,density,survival\n");
    for (double y : at)
      std::printf("%.17g,%.17g,%.17g\n", y, model.density(y), model.survival(y));
  }
  if (!quantiles.empty()) {
    std::printf("u,quantile\n");
    for (double u : quantiles) std::printf("%.17g,%.17g\n", u, model.quantile(u));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"heavy-tailed scale-mixture phase-type fitting"};
  app.require_subcommand(1);

  CommonFitFlags fit_flags;
  std::string fit_data;
  int erlang_q = 0;
  auto* fit_cmd = app.add_subcommand("fit", "fit to exact observations");
  fit_cmd->add_option("--data", fit_data, "CSV with header 'y'")->required();
  fit_cmd->add_option("--erlang", erlang_q,
                      "restrict the phase part to Erlang(q) and use the fast path");
  add_common_fit_flags(fit_cmd, fit_flags, true);

  CommonFitFlags cens_flags;
  std::string cens_exact, cens_censored;
  auto* cens_cmd = app.add_subcommand("fit-censored", "fit with censored observations");
  cens_cmd->add_option("--exact", cens_exact, "CSV with header 'y' (optional)");
  cens_cmd->add_option("--censored", cens_censored, "CSV with header 'lower,upper,weight'")
      ->required();
  add_common_fit_flags(cens_cmd, cens_flags, true);

  CommonFitFlags dist_flags;
  std::string target_spec;
  int nodes = 2000;
  auto* dist_cmd = app.add_subcommand("fit-dist", "fit to a known distribution");
  dist_cmd->add_option("--target", target_spec, "target spec")->required();
  dist_cmd->add_option("--nodes", nodes, "quadrature node count K")->check(CLI::PositiveNumber);
  add_common_fit_flags(dist_cmd, dist_flags, false);

  std::string sim_model;
  int sim_n = 1;
  std::uint64_t sim_seed = 12345;
  auto* sim_cmd = app.add_subcommand("simulate", "draw samples from a saved model");
  sim_cmd->add_option("--model", sim_model, "model file (.nph)")->required();
  sim_cmd->add_option("-n", sim_n, "number of draws")->required()->check(CLI::PositiveNumber);
  sim_cmd->add_option("--seed", sim_seed, "seed");

  std::string eval_model;
  std::vector<double> eval_at, eval_q;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a saved model");
  eval_cmd->add_option("--model", eval_model, "model file (.nph)")->required();
  eval_cmd->add_option("--at", eval_at, "evaluation points")->delimiter(',');
  eval_cmd->add_option("--quantile", eval_q, "quantile levels in (0,1)")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;  // help/version exit 0, bad flags exit 1
  }

  try {
    if (fit_cmd->parsed()) return cmd_fit(fit_flags, fit_data, erlang_q);
    if (cens_cmd->parsed()) return cmd_fit_censored(cens_flags, cens_exact, cens_censored);
    if (dist_cmd->parsed()) return cmd_fit_dist(dist_flags, target_spec, nodes);
    if (sim_cmd->parsed()) return cmd_simulate(sim_model, sim_n, sim_seed);
    if (eval_cmd->parsed()) return cmd_eval(eval_model, eval_at, eval_q);
  } catch (const nphfit::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "nphfit/common.hpp"
#include "nphfit/dataset.hpp"
#include "nphfit/kl_fit.hpp"
#include "nphfit/nph_model.hpp"

namespace nphfit {

enum class CsvKind { Exact, Weighted, Censored };

namespace detail {

inline std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    size_t end = line.find(',', start);
    if (end == std::string::npos) {
      out.push_back(trim(line.substr(start)));
      break;
    }
    out.push_back(trim(line.substr(start, end - start)));
    start = end + 1;
  }
  return out;
}

inline double parse_number(const std::string& tok, int line_no, bool allow_inf) {
  if (allow_inf && (tok == "inf" || tok == "Inf" || tok == "INF"))
    return kInf;
  try {
    size_t used = 0;
    double v = std::stod(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw ParseError("line " + std::to_string(line_no) + ": cannot parse '" + tok + "'");
  }
}

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

/// CSV ingestion. Headers are mandatory and must match the kind:
/// `y` | `y,weight` | `lower,upper,weight` ("inf" allowed as upper bound).
inline Dataset load_csv(const std::string& path, CsvKind kind) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open data file '" + path + "'");
  std::string line;
  int line_no = 0;
  if (!std::getline(in, line)) throw ParseError("'" + path + "': empty file");
  ++line_no;
  auto header = detail::split_csv_line(line);
  auto expect = [&](std::initializer_list<const char*> cols) {
    bool ok = header.size() == cols.size();
    size_t i = 0;
    for (const char* c : cols)
      ok = ok && i < header.size() && header[i++] == c;
    if (!ok) {
      std::string want;
      for (const char* c : cols) want += std::string(want.empty() ? "" : ",") + c;
      throw ParseError("'" + path + "': header must be '" + want + "'");
    }
  };
  switch (kind) {
    case CsvKind::Exact:
      expect({"y"});
      break;
    case CsvKind::Weighted:
      expect({"y", "weight"});
      break;
    case CsvKind::Censored:
      expect({"lower", "upper", "weight"});
      break;
  }

  Dataset data;
  data.provenance = path;
  std::vector<int> bad_rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split_csv_line(line);
    switch (kind) {
      case CsvKind::Exact: {
        if (cells.size() != 1)
          throw ParseError("line " + std::to_string(line_no) + ": expected 1 column");
        double y = detail::parse_number(cells[0], line_no, false);
        if (!(y > 0.0) || !std::isfinite(y)) {
          bad_rows.push_back(line_no);
          break;
        }
        data.exact.push_back({y, 1.0});
        break;
      }
      case CsvKind::Weighted: {
        if (cells.size() != 2)
          throw ParseError("line " + std::to_string(line_no) + ": expected 2 columns");
        double y = detail::parse_number(cells[0], line_no, false);
        double w = detail::parse_number(cells[1], line_no, false);
        if (!(y > 0.0) || !std::isfinite(y) || !(w > 0.0)) {
          bad_rows.push_back(line_no);
          break;
        }
        data.exact.push_back({y, w});
        break;
      }
      case CsvKind::Censored: {
        if (cells.size() != 3)
          throw ParseError("line " + std::to_string(line_no) + ": expected 3 columns");
        double lo = detail::parse_number(cells[0], line_no, false);
        double hi = detail::parse_number(cells[1], line_no, true);
        double w = detail::parse_number(cells[2], line_no, false);
        if (!(lo >= 0.0) || !(hi > lo) || !(w > 0.0)) {
          bad_rows.push_back(line_no);
          break;
        }
        data.censored.push_back({lo, hi, w});
        break;
      }
    }
  }
  if (!bad_rows.empty()) {
    std::string rows;
    for (int r : bad_rows) rows += (rows.empty() ? "" : ", ") + std::to_string(r);
    throw ValidationError("'" + path + "': rejected rows outside the support (0, inf): lines " +
                          rows);
  }
  if (data.empty()) throw ValidationError("'" + path + "': no data rows");
  return data;
}

enum class BinRepresentative { Midpoint, LeftShifted };

/// Body/tail hybrid reduction: exact observations below t_split collapse
/// into K equal-width bins (weights = counts, empty bins dropped), the tail
/// keeps raw values with exact duplicates merged. Left-endpoint mode still
/// uses the midpoint for the first bin so no representative can sit at zero.
inline Dataset bin_body_tail(const Dataset& data, double t_split, int k_bins,
                             BinRepresentative rep = BinRepresentative::Midpoint) {
  if (!(t_split > 0.0)) throw InvalidInputError("bin_body_tail: t_split must be positive");
  if (k_bins < 1) throw InvalidInputError("bin_body_tail: K must be >= 1");
  Dataset out;
  out.censored = data.censored;
  out.provenance = data.provenance + " [body bins K=" + std::to_string(k_bins) +
                   " below " + std::to_string(t_split) + "]";
  const double width = t_split / k_bins;
  std::vector<double> bin_weight(static_cast<size_t>(k_bins), 0.0);
  std::vector<WeightedObservation> tail;
  for (const auto& o : data.exact) {
    if (o.y < t_split) {
      int b = std::min(k_bins - 1, static_cast<int>(o.y / width));
      bin_weight[static_cast<size_t>(b)] += o.weight;
    } else {
      tail.push_back(o);
    }
  }
  for (int b = 0; b < k_bins; ++b) {
    if (bin_weight[static_cast<size_t>(b)] <= 0.0) continue;
    double y = (rep == BinRepresentative::Midpoint || b == 0) ? (b + 0.5) * width
                                                              : b * width;
    out.exact.push_back({y, bin_weight[static_cast<size_t>(b)]});
  }
  auto merged_tail = collapse_duplicates(std::move(tail));
  out.exact.insert(out.exact.end(), merged_tail.begin(), merged_tail.end());
  return out;
}

namespace detail {

inline const char* family_token(ScalingFamily::Kind k) {
  switch (k) {
    case ScalingFamily::Kind::GeometricPareto:
      return "geom-pareto";
    case ScalingFamily::Kind::Zeta:
      return "zeta";
    case ScalingFamily::Kind::DiscretizedWeibull:
      return "disc-weibull";
    case ScalingFamily::Kind::DiscretizedLognormal:
      return "disc-lognormal";
  }
  return "?";
}

}  // namespace detail

struct ModelMetadata {
  double loglik = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;
  bool converged = false;
};

/// Human-readable key/value model file; doubles are written with full
/// precision so load(save(m)) reproduces every parameter bit for bit.
inline void save_model(const NphModel& m, const std::string& path,
                       const ModelMetadata& meta = {}) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write model file '" + path + "'");
  const int p = m.ph.order();
  out << "nph-model v1\n";
  out << "family: " << detail::family_token(m.scaling.kind) << "\n";
  out << "c: " << detail::fmt_double(m.scaling.c) << "\n";
  out << "theta:";
  for (double v : m.scaling.theta) out << ' ' << detail::fmt_double(v);
  out << "\n";
  out << "theta_fixed: " << (m.scaling.theta_fixed ? 1 : 0) << "\n";
  out << "level_cap: " << m.scaling.level_cap << "\n";
  out << "trunc_eps: " << detail::fmt_double(m.trunc_eps) << "\n";
  out << "phases: " << p << "\n";
  out << "alpha:";
  for (int k = 0; k < p; ++k) out << ' ' << detail::fmt_double(m.ph.alpha(k));
  out << "\n";
  for (int k = 0; k < p; ++k) {
    out << "T_row:";
    for (int l = 0; l < p; ++l) out << ' ' << detail::fmt_double(m.ph.T(k, l));
    out << "\n";
  }
  if (std::isfinite(meta.loglik)) {
    out << "fit_loglik: " << detail::fmt_double(meta.loglik) << "\n";
    out << "fit_iterations: " << meta.iterations << "\n";
    out << "fit_converged: " << (meta.converged ? 1 : 0) << "\n";
  }
}

inline NphModel load_model(const std::string& path, ModelMetadata* meta = nullptr) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open model file '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || detail::trim(line) != "nph-model v1")
    throw ValidationError("'" + path + "': not a v1 model file");
  std::map<std::string, std::vector<std::string>> fields;
  std::vector<std::vector<std::string>> t_rows;
  while (std::getline(in, line)) {
    line = detail::trim(line);
    if (line.empty() || line[0] == '#') continue;
    auto colon = line.find(':');
    if (colon == std::string::npos)
      throw ParseError("'" + path + "': malformed line '" + line + "'");
    std::string key = detail::trim(line.substr(0, colon));
    std::istringstream rest(line.substr(colon + 1));
    std::vector<std::string> toks;
    std::string tok;
    while (rest >> tok) toks.push_back(tok);
    if (key == "T_row")
      t_rows.push_back(toks);
    else
      fields[key] = toks;
  }
  auto need = [&](const std::string& key) -> const std::vector<std::string>& {
    auto it = fields.find(key);
    if (it == fields.end() || it->second.empty())
      throw ValidationError("'" + path + "': missing field '" + key + "'");
    return it->second;
  };
  auto num = [&](const std::string& tok, const std::string& field) {
    try {
      return std::stod(tok);
    } catch (const std::exception&) {
      throw ParseError("'" + path + "': bad number in field '" + field + "'");
    }
  };

  std::string family = need("family").at(0);
  double c = num(need("c").at(0), "c");
  std::vector<double> theta;
  for (const auto& t : need("theta")) theta.push_back(num(t, "theta"));
  int p = static_cast<int>(num(need("phases").at(0), "phases"));
  if (p < 1 || static_cast<size_t>(p) != need("alpha").size())
    throw ValidationError("'" + path + "': alpha length does not match phases");
  if (t_rows.size() != static_cast<size_t>(p))
    throw ValidationError("'" + path + "': expected " + std::to_string(p) + " T_row lines");

  ScalingFamily fam;
  try {
    if (family == "geom-pareto") {
      if (theta.size() != 1) throw ValidationError("theta arity");
      fam = ScalingFamily::geometric_pareto(c, theta[0]);
    } else if (family == "zeta") {
      if (theta.size() != 1) throw ValidationError("theta arity");
      fam = ScalingFamily::zeta(theta[0]);
    } else if (family == "disc-weibull") {
      if (theta.size() != 2) throw ValidationError("theta arity");
      fam = ScalingFamily::discretized_weibull(c, theta[0], theta[1]);
    } else if (family == "disc-lognormal") {
      if (theta.size() != 2) throw ValidationError("theta arity");
      fam = ScalingFamily::discretized_lognormal(theta[0], theta[1]);
    } else {
      throw ValidationError("unknown family '" + family + "'");
    }
  } catch (const Error& e) {
    throw ValidationError("'" + path + "': " + e.what());
  }
  fam.theta_fixed = num(need("theta_fixed").at(0), "theta_fixed") != 0.0;
  fam.level_cap = static_cast<int>(num(need("level_cap").at(0), "level_cap"));

  RowVector alpha(p);
  for (int k = 0; k < p; ++k) alpha(k) = num(need("alpha").at(static_cast<size_t>(k)), "alpha");
  Matrix t_mat(p, p);
  for (int k = 0; k < p; ++k) {
    if (t_rows[static_cast<size_t>(k)].size() != static_cast<size_t>(p))
      throw ValidationError("'" + path + "': T_row " + std::to_string(k) + " has wrong arity");
    for (int l = 0; l < p; ++l)
      t_mat(k, l) = num(t_rows[static_cast<size_t>(k)][static_cast<size_t>(l)], "T_row");
  }
  NphModel model{fam, validate(alpha, t_mat), num(need("trunc_eps").at(0), "trunc_eps")};
  if (meta) {
    if (auto it = fields.find("fit_loglik"); it != fields.end() && !it->second.empty())
      meta->loglik = num(it->second[0], "fit_loglik");
    if (auto it = fields.find("fit_iterations"); it != fields.end() && !it->second.empty())
      meta->iterations = static_cast<int>(num(it->second[0], "fit_iterations"));
    if (auto it = fields.find("fit_converged"); it != fields.end() && !it->second.empty())
      meta->converged = num(it->second[0], "fit_converged") != 0.0;
  }
  return model;
}

/// Two-column curve files for external plotting.
inline void write_curves(const NphModel& m, const std::string& stem, double y_max,
                         int grid = 400) {
  std::ofstream dens(stem + ".density.csv");
  std::ofstream surv(stem + ".survival.csv");
  if (!dens || !surv) throw Error("cannot write curve files for stem '" + stem + "'");
  dens << "y,value\n";
  surv << "y,value\n";
  std::vector<double> ys(static_cast<size_t>(grid));
  for (int i = 0; i < grid; ++i) ys[static_cast<size_t>(i)] = y_max * i / (grid - 1.0);
  auto sv = m.survival_batch(ys);
  for (int i = 0; i < grid; ++i) {
    dens << detail::fmt_double(ys[static_cast<size_t>(i)]) << ','
         << detail::fmt_double(m.density(ys[static_cast<size_t>(i)])) << "\n";
    surv << detail::fmt_double(ys[static_cast<size_t>(i)]) << ','
         << detail::fmt_double(sv[static_cast<size_t>(i)]) << "\n";
  }
}

inline void write_target_curves(const TargetDistribution& target, const std::string& stem,
                                double y_max, int grid = 400) {
  std::ofstream out(stem + ".target.csv");
  if (!out) throw Error("cannot write target curve file for stem '" + stem + "'");
  out << "y,density,survival\n";
  for (int i = 0; i < grid; ++i) {
    double y = y_max * i / (grid - 1.0);
    out << detail::fmt_double(y) << ',' << detail::fmt_double(target.density(y)) << ','
        << detail::fmt_double(1.0 - target.cdf(y)) << "\n";
  }
}

inline void write_trace(const std::vector<double>& trace, const std::string& stem) {
  std::ofstream out(stem + ".trace.csv");
  if (!out) throw Error("cannot write trace file for stem '" + stem + "'");
  out << "iteration,loglik\n";
  for (size_t i = 0; i < trace.size(); ++i)
    out << i << ',' << detail::fmt_double(trace[i]) << "\n";
}

/// Tabulated targets: CSV with header `u,quantile`, rows strictly increasing.
inline TargetDistribution load_table_target(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open target table '" + path + "'");
  std::string line;
  int line_no = 0;
  if (!std::getline(in, line)) throw ParseError("'" + path + "': empty file");
  ++line_no;
  auto header = detail::split_csv_line(line);
  if (header.size() != 2 || header[0] != "u" || header[1] != "quantile")
    throw ParseError("'" + path + "': header must be 'u,quantile'");
  std::vector<std::pair<double, double>> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split_csv_line(line);
    if (cells.size() != 2)
      throw ParseError("line " + std::to_string(line_no) + ": expected 2 columns");
    rows.emplace_back(detail::parse_number(cells[0], line_no, false),
                      detail::parse_number(cells[1], line_no, false));
  }
  return TargetDistribution::tabulated(std::move(rows));
}

inline TargetDistribution parse_target_spec(const std::string& spec) {
  std::string head = spec;
  std::string args;
  if (auto pos = spec.find(':'); pos != std::string::npos) {
    head = spec.substr(0, pos);
    args = spec.substr(pos + 1);
  }
  if (head == "table") {
    if (args.empty()) throw ParseError("target spec 'table:' needs a path");
    return load_table_target(args);
  }
  return parse_target_params(head, args);
}

}  // namespace nphfit

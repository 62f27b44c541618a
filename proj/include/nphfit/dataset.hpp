#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "nphfit/common.hpp"

namespace nphfit {

struct WeightedObservation {
  double y = 0.0;
  double weight = 1.0;
};

/// Knowledge that Y lies in (lower, upper]; lower == 0 is left censoring,
/// upper == +inf is right censoring.
struct CensoredObservation {
  double lower = 0.0;
  double upper = kInf;
  double weight = 1.0;
};

struct Dataset {
  std::vector<WeightedObservation> exact;
  std::vector<CensoredObservation> censored;
  std::string provenance;

  double total_weight() const {
    double w = 0.0;
    for (const auto& o : exact) w += o.weight;
    for (const auto& o : censored) w += o.weight;
    return w;
  }

  bool empty() const { return exact.empty() && censored.empty(); }

  void check() const {
    if (empty()) throw ValidationError("dataset is empty");
    for (const auto& o : exact) {
      if (!(o.y > 0.0) || !std::isfinite(o.y))
        throw ValidationError("dataset: exact observations must be positive and finite");
      if (!(o.weight > 0.0)) throw ValidationError("dataset: weights must be positive");
    }
    for (const auto& o : censored) {
      if (!(o.lower >= 0.0) || !(o.upper > o.lower))
        throw ValidationError("dataset: censored intervals require 0 <= lower < upper");
      if (!(o.weight > 0.0)) throw ValidationError("dataset: weights must be positive");
    }
  }
};

/// Sorts ascending and merges bitwise-equal values into single weighted
/// observations.
inline std::vector<WeightedObservation> collapse_duplicates(
    std::vector<WeightedObservation> obs) {
  std::sort(obs.begin(), obs.end(),
            [](const WeightedObservation& a, const WeightedObservation& b) { return a.y < b.y; });
  std::vector<WeightedObservation> out;
  out.reserve(obs.size());
  for (const auto& o : obs) {
    if (!out.empty() && out.back().y == o.y)
      out.back().weight += o.weight;
    else
      out.push_back(o);
  }
  return out;
}

/// Weighted quantile of the exact part (lower interpolation point).
inline double weighted_quantile(std::vector<WeightedObservation> obs, double q) {
  if (obs.empty()) throw InvalidInputError("weighted_quantile: no observations");
  std::sort(obs.begin(), obs.end(),
            [](const WeightedObservation& a, const WeightedObservation& b) { return a.y < b.y; });
  double total = 0.0;
  for (const auto& o : obs) total += o.weight;
  double target = q * total;
  double acc = 0.0;
  for (const auto& o : obs) {
    acc += o.weight;
    if (acc >= target) return o.y;
  }
  return obs.back().y;
}

/// Representative scale of a dataset, used to seed initial parameters:
/// weighted median over exact values and finite census of the intervals.
inline double data_scale(const Dataset& data) {
  std::vector<WeightedObservation> rep = data.exact;
  for (const auto& o : data.censored) {
    double v = std::isfinite(o.upper) ? 0.5 * (o.lower + o.upper)
                                      : std::max(o.lower, 1e-8);
    if (v > 0.0) rep.push_back({v, o.weight});
  }
  if (rep.empty()) throw InvalidInputError("data_scale: dataset carries no finite scale");
  return weighted_quantile(std::move(rep), 0.5);
}

}  // namespace nphfit

#pragma once

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>
#include <vector>

#include "nsgmm/io.hpp"
#include "nsgmm/types.hpp"

namespace nsgmm {

enum class RateClass { RootN, CubeRoot, Indeterminate };

inline std::string rate_class_name(RateClass c) {
  switch (c) {
    case RateClass::RootN: return "ROOT_N";
    case RateClass::CubeRoot: return "CUBE_ROOT";
    case RateClass::Indeterminate: return "INDETERMINATE";
  }
  return "INDETERMINATE";
}

struct RatePoint {
  double n = 0.0;
  double variance = 0.0;
};

struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_se = 0.0;
  double r_squared = 0.0;
  double endpoint_slope = 0.0;
  RateClass classification = RateClass::Indeterminate;
};

/// Absolute floor of the classification band around -1 and -2/3.
inline constexpr double kRateBandFloor = 0.12;

inline RateClass classify_slope(double slope, double slope_se) {
  const double band = std::max(2.0 * slope_se, kRateBandFloor);
  const double d_root = std::abs(slope + 1.0);
  const double d_cube = std::abs(slope + 2.0 / 3.0);
  const bool root = d_root <= band, cube = d_cube <= band;
  if (root && cube) return d_root <= d_cube ? RateClass::RootN : RateClass::CubeRoot;
  if (root) return RateClass::RootN;
  if (cube) return RateClass::CubeRoot;
  return RateClass::Indeterminate;
}

inline void check_series(const std::vector<RatePoint>& s) {
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (!(s[k].variance > 0.0) || !std::isfinite(s[k].variance)) throw Error("variance must be positive");
    if (!(s[k].n > 0.0)) throw Error("sample sizes must be positive");
    if (k > 0 && !(s[k].n > s[k - 1].n)) throw Error("sample sizes must be strictly increasing");
  }
}

/// OLS of ln(variance) on ln(n).
inline RateFit fit_rate(const std::vector<RatePoint>& series) {
  if (series.size() < 3) throw Error("fit_rate needs at least 3 points");
  check_series(series);
  const double k = static_cast<double>(series.size());
  double mx = 0.0, my = 0.0;
  for (const auto& p : series) {
    mx += std::log(p.n);
    my += std::log(p.variance);
  }
  mx /= k;
  my /= k;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (const auto& p : series) {
    const double dx = std::log(p.n) - mx, dy = std::log(p.variance) - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  RateFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double sse = 0.0;
  for (const auto& p : series) {
    const double e = std::log(p.variance) - f.intercept - f.slope * std::log(p.n);
    sse += e * e;
  }
  f.slope_se = std::sqrt(sse / (k - 2.0) / sxx);
  f.r_squared = syy > 0.0 ? std::clamp(1.0 - sse / syy, 0.0, 1.0) : 1.0;
  f.endpoint_slope = std::log(series.back().variance / series.front().variance) /
                     std::log(series.back().n / series.front().n);
  f.classification = classify_slope(f.slope, f.slope_se);
  return f;
}

struct DecayPoint {
  double n = 0.0;
  double ratio = 0.0;
  double ref_n_inv = 0.0;  // (n0 / n)
  double ref_n_23 = 0.0;   // (n0 / n)^(2/3)
};

/// Variances relative to the first point, with the two reference curves.
inline std::vector<DecayPoint> normalize_decay(const std::vector<RatePoint>& series) {
  if (series.empty()) throw Error("normalize_decay needs a non-empty series");
  if (!(series.front().variance != 0.0)) throw Error("zero reference variance");
  check_series(series);
  std::vector<DecayPoint> out;
  const double n0 = series.front().n, v0 = series.front().variance;
  for (const auto& p : series)
    out.push_back({p.n, p.variance / v0, n0 / p.n, std::pow(n0 / p.n, 2.0 / 3.0)});
  return out;
}

inline void write_rates_header(std::ostream& out) {
  out << "scenario_id,component,slope,slope_se,endpoint_slope,r_squared,classification\n";
}

inline void write_rates_row(std::ostream& out, const std::string& scenario_id, const std::string& component,
                            const RateFit& f) {
  out << scenario_id << ',' << component << ',' << fmt(f.slope) << ',' << fmt(f.slope_se) << ','
      << fmt(f.endpoint_slope) << ',' << fmt(f.r_squared) << ',' << rate_class_name(f.classification) << '\n';
}

inline void write_decay_header(std::ostream& out) { out << "component,n,ratio,ref_n_inv,ref_n_23\n"; }

inline void write_decay_rows(std::ostream& out, const std::string& component, const std::vector<DecayPoint>& d) {
  for (const auto& p : d)
    out << component << ',' << fmt(p.n) << ',' << fmt(p.ratio) << ',' << fmt(p.ref_n_inv) << ',' << fmt(p.ref_n_23)
        << '\n';
}

}  // namespace nsgmm

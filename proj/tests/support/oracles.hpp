#pragma once

// Test-only reference computations. Nothing here calls the optimizers it is
// used to check.

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "nsgmm/dataset.hpp"
#include "nsgmm/types.hpp"

namespace oracle {

using nsgmm::Dataset;
using nsgmm::Matrix;
using nsgmm::MomentSpec;
using nsgmm::Vector;

/// Location moment vector by direct summation over observations.
inline Vector location_moments(const MomentSpec& spec, const Dataset& data, double theta) {
  const auto n = data.size();
  Vector g = Vector::Zero(spec.moment_dim());
  for (Eigen::Index i = 0; i < n; ++i) {
    const double y = data.outcome(i);
    int c = 0;
    if (spec.family != nsgmm::Family::LocationG4) g(c++) += (y <= theta ? 1.0 : 0.0) - spec.tau;
    g(c++) += y - theta;
    if (spec.family != nsgmm::Family::LocationG1) g(c++) += (y - theta) * (y - theta) - 4.0;
    if (spec.family == nsgmm::Family::LocationG3 || spec.family == nsgmm::Family::LocationG4)
      for (int j = 0; j < 5; ++j) g(c++) += data.covariates(i, j) - (0.5 - spec.tau);
  }
  return g / static_cast<double>(n);
}

inline double location_q(const MomentSpec& spec, const Dataset& data, const Matrix& w, double theta) {
  const Vector g = location_moments(spec, data, theta);
  return g.dot(w * g);
}

struct GridMin {
  double theta;
  double q;
};

/// Dense grid over [lo, hi] followed by repeated local grid refinement around
/// the best few points. Refinement keeps the coarse winner if nothing beats it.
inline GridMin location_grid_min(const MomentSpec& spec, const Dataset& data, const Matrix& w, double lo, double hi,
                                 int points = 100000) {
  // Sufficient statistics keep the coarse pass cheap; the refinement uses
  // direct summation.
  std::vector<double> ys(data.outcome.data(), data.outcome.data() + data.size());
  std::sort(ys.begin(), ys.end());
  const double n = static_cast<double>(ys.size());
  const double ybar = data.outcome.mean();
  const double s2 = (data.outcome.array() - ybar).square().mean();
  Vector xbar = Vector::Zero(5);
  if (data.covariates.cols() == 5) xbar = data.covariates.colwise().mean().transpose();
  auto q_fast = [&](double theta) {
    Vector g(spec.moment_dim());
    int c = 0;
    if (spec.family != nsgmm::Family::LocationG4) {
      const double count = static_cast<double>(std::upper_bound(ys.begin(), ys.end(), theta) - ys.begin());
      g(c++) = count / n - spec.tau;
    }
    g(c++) = ybar - theta;
    if (spec.family != nsgmm::Family::LocationG1) g(c++) = s2 + (ybar - theta) * (ybar - theta) - 4.0;
    if (spec.family == nsgmm::Family::LocationG3 || spec.family == nsgmm::Family::LocationG4)
      for (int j = 0; j < 5; ++j) g(c++) = xbar(j) - (0.5 - spec.tau);
    return g.dot(w * g);
  };

  std::vector<std::pair<double, double>> grid;
  grid.reserve(points);
  const double step = (hi - lo) / (points - 1);
  for (int k = 0; k < points; ++k) {
    const double t = lo + step * k;
    grid.emplace_back(q_fast(t), t);
  }
  std::partial_sort(grid.begin(), grid.begin() + 8, grid.end());
  GridMin best{grid[0].second, location_q(spec, data, w, grid[0].second)};
  for (int s = 0; s < 8; ++s) {
    double center = grid[s].second;
    double half = step;
    for (int level = 0; level < 5; ++level) {
      const int m = 400;
      double level_best_t = center;
      double level_best_q = location_q(spec, data, w, center);
      for (int k = 0; k <= m; ++k) {
        const double t = std::clamp(center - half + 2.0 * half * k / m, lo, hi);
        const double q = location_q(spec, data, w, t);
        if (q < level_best_q) {
          level_best_q = q;
          level_best_t = t;
        }
      }
      if (level_best_q < best.q) best = {level_best_t, level_best_q};
      center = level_best_t;
      half = 2.0 * half / m;
    }
  }
  return best;
}

/// Indicator vector 1(y_i <= alpha + beta D_i).
inline std::vector<bool> ivqr_indicators(const Dataset& data, double alpha, double beta) {
  std::vector<bool> v(static_cast<std::size_t>(data.size()));
  for (Eigen::Index i = 0; i < data.size(); ++i) v[i] = data.outcome(i) <= alpha + beta * data.regressor(i);
  return v;
}

/// IVQR criterion by direct summation written independently of the library.
inline double ivqr_q(const Dataset& data, double alpha, double beta, double tau, const Matrix& w) {
  Vector g = Vector::Zero(3);
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    const double f = tau - (data.outcome(i) <= alpha + beta * data.regressor(i) ? 1.0 : 0.0);
    g(0) += f;
    g(1) += f * data.regressor(i);
    g(2) += f * data.instruments(i, 2);
  }
  g /= static_cast<double>(data.size());
  return g.dot(w * g);
}

/// Unbiased sample variance, two-pass.
inline double sample_variance(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return ss / static_cast<double>(v.size() - 1);
}

/// OLS slope of log(v) on log(n) through the normal equations.
inline double loglog_slope(const std::vector<double>& n, const std::vector<double>& v) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double k = static_cast<double>(n.size());
  for (std::size_t i = 0; i < n.size(); ++i) {
    const double x = std::log(n[i]), y = std::log(v[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (k * sxy - sx * sy) / (k * sxx - sx * sx);
}

}  // namespace oracle

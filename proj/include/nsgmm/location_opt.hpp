#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include <unsupported/Eigen/Polynomials>

#include "nsgmm/dataset.hpp"
#include "nsgmm/moments.hpp"
#include "nsgmm/weights.hpp"

namespace nsgmm {

namespace detail {

/// Real roots of sum_k c[k] u^k after trimming negligible leading terms.
inline std::vector<double> real_polynomial_roots(std::vector<double> c) {
  double scale = 0.0;
  for (double v : c) scale = std::max(scale, std::abs(v));
  while (!c.empty() && std::abs(c.back()) <= 1e-14 * scale) c.pop_back();
  std::vector<double> roots;
  if (c.size() < 2) return roots;
  if (c.size() == 2) {
    roots.push_back(-c[0] / c[1]);
    return roots;
  }
  Eigen::VectorXd coeffs = Eigen::Map<const Eigen::VectorXd>(c.data(), static_cast<Eigen::Index>(c.size()));
  Eigen::PolynomialSolver<double, Eigen::Dynamic> solver(coeffs);
  for (Eigen::Index k = 0; k < solver.roots().size(); ++k) {
    const auto r = solver.roots()(k);
    if (!std::isfinite(r.real()) || !std::isfinite(r.imag()))
      throw Error("polynomial root finder did not converge");
    if (std::abs(r.imag()) > 1e-7 * (1.0 + std::abs(r.real()))) continue;
    // two Newton steps on the real part
    double u = r.real();
    for (int it = 0; it < 2; ++it) {
      double p = 0.0, dp = 0.0;
      for (std::size_t j = c.size(); j-- > 0;) {
        dp = dp * u + p;
        p = p * u + c[j];
      }
      if (dp != 0.0) u -= p / dp;
    }
    roots.push_back(u);
  }
  return roots;
}

}  // namespace detail

/// Exact global minimizer of gbar(theta)' W gbar(theta) over [box.lo, box.hi]
/// for a location family.
///
/// Between consecutive order statistics the indicator component is constant
/// and every other component is a polynomial of degree <= 2 in theta, so the
/// criterion is a quartic per interval. Each interval [y_(k), y_(k+1)) is
/// clipped to the box and its candidates are: the closed left end, the real
/// roots of the cubic derivative in the interior, and the right end (the box
/// edge if it is closed there, otherwise the last double below y_(k+1)).
/// Ties keep the smallest theta.
inline GmmFit minimize_location(const MomentSpec& spec, const Dataset& data, const WeightMatrix& weight,
                                const ParamBox& box = {}) {
  check_location_inputs(spec, data);
  box.validate();
  const int m = spec.moment_dim();
  const Matrix& w = weight.matrix;
  if (w.rows() != m || w.cols() != m) throw Error("weight dimension differs from moment dimension");

  const auto n = data.size();
  const double nd = static_cast<double>(n);
  const double ybar = data.outcome.mean();
  const double s2 = (data.outcome.array() - ybar).square().mean();

  // gbar(u) = a + b u + c u^2 with u = theta - ybar; a(0) is the indicator slot.
  Vector a = Vector::Zero(m), b = Vector::Zero(m), c = Vector::Zero(m);
  int slot = 0;
  const int ind = spec.has_indicator() ? slot++ : -1;
  a(slot) = 0.0;
  b(slot) = -1.0;
  ++slot;
  if (spec.family != Family::LocationG1) {
    a(slot) = s2 - kLocationVariance;
    c(slot) = 1.0;
    ++slot;
  }
  if (spec.needs_covariates())
    a.tail(5) = (data.covariates.colwise().mean().array() - (0.5 - spec.tau)).transpose();

  const Vector wb = w * b, wc = w * c;
  const double bwb = b.dot(wb), bwc = b.dot(wc), cwc = c.dot(wc);

  // Distinct sorted outcomes and counts of y <= value.
  std::vector<double> ys(data.outcome.data(), data.outcome.data() + n);
  std::sort(ys.begin(), ys.end());
  std::vector<double> values;
  std::vector<long> at_or_below;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    if (i + 1 < ys.size() && ys[i + 1] == ys[i]) continue;
    values.push_back(ys[i]);
    at_or_below.push_back(static_cast<long>(i + 1));
  }

  const double inf = std::numeric_limits<double>::infinity();
  double best_q = inf;
  double best_theta = box.lo;
  long best_interval = 0;
  long ties = 0;

  auto value_at = [&](double theta) {
    const double u = theta - ybar;
    const Vector g = a + b * u + c * (u * u);
    return g.dot(w * g);
  };
  auto consider = [&](double theta, long interval) {
    const double q = value_at(theta);
    const double tol = std::isfinite(best_q) ? 1e-12 * std::max(1.0, std::abs(best_q)) : 0.0;
    if (!std::isfinite(best_q) || q < best_q - tol) {
      best_q = q;
      best_theta = theta;
      best_interval = interval;
      ties = 1;
    } else if (std::abs(q - best_q) <= tol && interval != best_interval) {
      ++ties;
      if (q < best_q) {
        best_q = q;
        best_theta = theta;
        best_interval = interval;
      }
    }
  };

  const long intervals = spec.has_indicator() ? static_cast<long>(values.size()) + 1 : 1;
  for (long k = 0; k < intervals; ++k) {
    double left = box.lo, right = box.hi;
    bool right_closed = true;
    if (spec.has_indicator()) {
      const double v_lo = k == 0 ? -inf : values[k - 1];
      const double v_hi = k == static_cast<long>(values.size()) ? inf : values[k];
      left = std::max(v_lo, box.lo);
      if (v_hi <= box.hi) {
        right = v_hi;
        right_closed = false;
      }
      a(ind) = (k == 0 ? 0.0 : static_cast<double>(at_or_below[k - 1])) / nd - spec.tau;
    }
    const double right_attained = right_closed ? right : std::nextafter(right, -inf);
    if (right_attained < left) continue;

    consider(left, k);
    const double q1 = 2.0 * a.dot(wb);
    const double q2 = bwb + 2.0 * a.dot(wc);
    const double q3 = 2.0 * bwc;
    const double q4 = cwc;
    for (double u : detail::real_polynomial_roots({q1, 2.0 * q2, 3.0 * q3, 4.0 * q4})) {
      const double theta = u + ybar;
      if (theta > left && theta < right_attained) consider(theta, k);
    }
    if (right_attained > left) consider(right_attained, k);
  }

  GmmFit fit;
  fit.theta_hat = ParamPoint::Constant(1, best_theta);
  fit.q_hat = criterion(eval_location(spec, data, best_theta), w);
  fit.weight_used = weight;
  fit.diagnostics.cell.interval = best_interval;
  fit.diagnostics.cell.rank = (data.outcome.array() <= best_theta).count();
  fit.diagnostics.cell.representative = fit.theta_hat;
  fit.diagnostics.tied_cells = ties;
  fit.diagnostics.events = intervals;
  fit.diagnostics.solver = "location-piecewise-quartic";
  return fit;
}

}  // namespace nsgmm

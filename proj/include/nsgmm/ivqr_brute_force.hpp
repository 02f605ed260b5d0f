#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "nsgmm/dataset.hpp"
#include "nsgmm/moments.hpp"
#include "nsgmm/weights.hpp"

namespace nsgmm {

inline constexpr long kBruteForceMaxN = 200;

namespace detail {

/// Direct-summation IVQR criterion at (alpha, beta).
inline double ivqr_criterion_direct(const Dataset& data, double alpha, double beta, double tau, const Matrix& w) {
  double g0 = 0.0, g1 = 0.0, g2 = 0.0;
  const auto n = data.size();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double f = tau - (data.outcome(i) <= alpha + beta * data.regressor(i) ? 1.0 : 0.0);
    g0 += f * data.instruments(i, 0);
    g1 += f * data.instruments(i, 1);
    g2 += f * data.instruments(i, 2);
  }
  Eigen::Vector3d g(g0, g1, g2);
  g /= static_cast<double>(n);
  return std::max(0.0, g.dot(w * g));
}

}  // namespace detail

/// Oracle for the IVQR criterion minimum over the box.
///
/// Every cell of the line arrangement alpha = y_i - beta D_i, intersected with
/// the box, has a leftmost point. That point is an arrangement vertex, a
/// point of the left box edge, or a point where a line meets the top or
/// bottom edge. The oracle probes a point just to the right of each of those
/// (between the two lines through a vertex; inside every intercept gap on
/// the left edge; on both sides of every line/edge crossing) and evaluates
/// the criterion by direct summation. Cost O(n^3).
inline GmmFit brute_force_ivqr(const Dataset& data, double tau, const WeightMatrix& weight, const ParamBox& box = {}) {
  check_ivqr_inputs(data);
  box.validate();
  const auto n = data.size();
  if (n > kBruteForceMaxN) throw Error("brute_force_ivqr: n too large (limit 200)");
  const Matrix& w = weight.matrix;
  if (w.rows() != 3 || w.cols() != 3) throw Error("IVQR weight must be 3 x 3");

  const Vector& y = data.outcome;
  const Vector& d = data.regressor;
  const double span = std::max({1.0, std::abs(box.lo), std::abs(box.hi)});
  const double h = 1e-9 * span;

  double best_q = std::numeric_limits<double>::infinity();
  double best_a = 0.0, best_b = 0.0;
  long candidates = 0;
  auto probe = [&](double beta, double alpha) {
    if (!(beta > box.lo && beta < box.hi && alpha > box.lo && alpha < box.hi)) return;
    ++candidates;
    const double q = detail::ivqr_criterion_direct(data, alpha, beta, tau, w);
    if (q < best_q) {
      best_q = q;
      best_a = alpha;
      best_b = beta;
    }
  };

  // Left edge: every intercept gap at beta = lo + h.
  {
    const double beta = box.lo + h;
    std::vector<double> c(n);
    for (Eigen::Index i = 0; i < n; ++i) c[i] = y(i) - beta * d(i);
    std::sort(c.begin(), c.end());
    std::vector<double> cuts{box.lo};
    for (double v : c)
      if (v > box.lo && v < box.hi) cuts.push_back(v);
    cuts.push_back(box.hi);
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k) probe(beta, 0.5 * (cuts[k] + cuts[k + 1]));
  }

  // Arrangement vertices: the wedge between the two lines just to the right.
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) {
      if (d(i) == d(j)) continue;
      const double beta = (y(i) - y(j)) / (d(i) - d(j));
      const double alpha = y(i) - beta * d(i);
      if (!(beta > box.lo && beta < box.hi && alpha > box.lo && alpha < box.hi)) continue;
      const double step = h * std::max(1.0, std::abs(beta));
      const double b = beta + step;
      probe(b, 0.5 * ((y(i) - b * d(i)) + (y(j) - b * d(j))));
    }

  // Line crossings of the top and bottom edges.
  for (Eigen::Index i = 0; i < n; ++i) {
    if (d(i) == 0.0) continue;
    const double eta = 0.5 * h * std::abs(d(i));
    for (double edge : {box.lo, box.hi}) {
      const double beta = (y(i) - edge) / d(i);
      if (!(beta > box.lo && beta < box.hi)) continue;
      const double inward = edge == box.lo ? eta : -eta;
      probe(beta + h, edge + inward);
      probe(beta - h, edge + inward);
    }
  }

  // Corners.
  for (double b : {box.lo + h, box.hi - h})
    for (double a : {box.lo + h, box.hi - h}) probe(b, a);

  if (!std::isfinite(best_q)) throw Error("brute_force_ivqr: box excludes every cell");

  GmmFit fit;
  fit.theta_hat = ParamPoint(2);
  fit.theta_hat << best_a, best_b;
  fit.q_hat = best_q;
  fit.weight_used = weight;
  fit.diagnostics.cell.representative = fit.theta_hat;
  fit.diagnostics.cell.rank = (y.array() <= best_a + best_b * d.array()).count();
  fit.diagnostics.events = candidates;
  fit.diagnostics.solver = "ivqr-brute-force";
  return fit;
}

}  // namespace nsgmm

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "nsgmm/moments.hpp"
#include "nsgmm/sampling.hpp"
#include "nsgmm/types.hpp"
#include "nsgmm/weights.hpp"

namespace nsgmm {

/// Everything the population criterion depends on besides (spec, theta).
struct PopulationSetting {
  double delta = 0.0;  // IVQR endogeneity
  JointEpsilonScale scale = JointEpsilonScale::Scaled;  // g3/g4 epsilon scale
  QuadratureRule rule{};

  double eps_sd(const MomentSpec& spec) const {
    if (spec.needs_covariates() && scale == JointEpsilonScale::Unit) return 1.0;
    return 2.0;
  }
};

inline Vector population_moments(const MomentSpec& spec, const ParamPoint& theta, const PopulationSetting& ps = {}) {
  if (theta.size() != spec.param_dim()) throw Error("parameter dimension mismatch");
  if (spec.is_location()) return population_location(spec, theta(0), ps.eps_sd(spec));
  return population_ivqr(theta, ps.delta, spec.tau, ps.rule);
}

namespace detail {

/// E[eps^k 1(eps <= t)] for eps ~ N(0, s^2), k = 0..4.
inline std::array<double, 5> truncated_normal_moments(double t, double s) {
  const double z = t / s;
  const double f = normal_cdf(z), p = normal_pdf(z);
  return {f, -s * p, s * s * (f - z * p), -s * s * s * (z * z + 2.0) * p,
          s * s * s * s * (3.0 * f - (z * z * z + 3.0 * z) * p)};
}

/// Polynomial in eps, coefficients low to high, degree <= 2.
using Quad = std::array<double, 3>;

}  // namespace detail

/// E[g(X, theta) g(X, theta)'] for a location family, in closed form.
///
/// Conditional on eps, every component of g has a mean that is a polynomial
/// of degree <= 2 in eps (the indicator contributes a constant that differs
/// below and above theta), and only the x block has a conditional variance,
/// which is constant. Each entry is therefore a degree <= 4 polynomial in eps
/// integrated separately over eps <= theta and eps > theta.
inline Matrix population_location_second_moment(const MomentSpec& spec, double theta, double eps_sd) {
  if (!spec.is_location()) throw Error("expected a location moment family");
  const int m = spec.moment_dim();
  const double s2 = eps_sd * eps_sd;

  // x | eps ~ N(c eps / s2, Sxx - c c' / s2) with c = cov(eps, x).
  const Matrix corr = location_joint_correlation();
  const Vector c = eps_sd * corr.block(1, 0, 5, 1);
  const Matrix cond_cov = corr.block(1, 1, 5, 5) - c * c.transpose() / s2;

  std::vector<detail::Quad> below(m), above(m);
  int k = 0;
  if (spec.has_indicator()) {
    below[k] = {1.0 - spec.tau, 0.0, 0.0};
    above[k] = {-spec.tau, 0.0, 0.0};
    ++k;
  }
  below[k] = above[k] = {-theta, 1.0, 0.0};
  ++k;
  if (spec.family != Family::LocationG1) {
    below[k] = above[k] = {theta * theta - kLocationVariance, -2.0 * theta, 1.0};
    ++k;
  }
  const int x0 = k;
  if (spec.needs_covariates())
    for (int j = 0; j < 5; ++j, ++k) below[k] = above[k] = {-(0.5 - spec.tau), c(j) / s2, 0.0};

  const auto lo = detail::truncated_normal_moments(theta, eps_sd);
  const std::array<double, 5> full{1.0, 0.0, s2, 0.0, 3.0 * s2 * s2};
  auto integrate = [](const detail::Quad& a, const detail::Quad& b, const std::array<double, 5>& mom) {
    double v = 0.0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) v += a[i] * b[j] * mom[i + j];
    return v;
  };
  std::array<double, 5> hi{};
  for (int i = 0; i < 5; ++i) hi[i] = full[i] - lo[i];

  Matrix out(m, m);
  for (int a = 0; a < m; ++a)
    for (int b = a; b < m; ++b)
      out(a, b) = out(b, a) = integrate(below[a], below[b], lo) + integrate(above[a], above[b], hi);
  if (spec.needs_covariates()) out.block(x0, x0, 5, 5) += cond_cov;
  return out;
}

/// E[g g'] for IVQR: (tau - 1)^2 = tau^2 + (1 - 2 tau) 1, so the entry is
/// E[(tau^2 + (1 - 2 tau) Phi(.)) z z'] with the same conditional probability
/// as in population_ivqr. Evaluated by tensor Gauss-Hermite quadrature.
inline Matrix population_ivqr_second_moment(const ParamPoint& theta, double delta, double tau, int nodes = 64) {
  check_ivqr_delta(delta);
  const double s = std::sqrt(1.0 - 4.0 / 3.0 * delta * delta);
  const double a = theta(0) - kIvqrAlpha0, b = theta(1) - kIvqrBeta0;
  const GaussHermite& gh = gauss_hermite(nodes);
  Matrix out = Matrix::Zero(3, 3);
  for (int i = 0; i < nodes; ++i)
    for (int j = 0; j < nodes; ++j) {
      const double d = gh.nodes(i);
      const double w = 0.5 * d + std::sqrt(0.75) * gh.nodes(j);
      const double p = normal_cdf((a + b * d + (2.0 / 3.0 * d - 4.0 / 3.0 * w) * delta) / s);
      const Eigen::Vector3d z(1.0, d, w);
      out += gh.weights(i) * gh.weights(j) * (tau * tau + (1.0 - 2.0 * tau) * p) * (z * z.transpose());
    }
  return out;
}

/// E[z z'] for the IVQR instruments z = (1, D, W).
inline Matrix population_instrument_second_moment() {
  Matrix m(3, 3);
  m << 1.0, 0.0, 0.0,
       0.0, 1.0, 0.5,
       0.0, 0.5, 1.0;
  return m;
}

/// Probability limit of build_weight. EfficientAtPreliminary needs the
/// probability limit of the first-stage estimate in `prelim`.
inline WeightMatrix population_weight(const WeightScheme& scheme, const MomentSpec& spec,
                                      const PopulationSetting& ps = {},
                                      const std::optional<ParamPoint>& prelim = std::nullopt) {
  const int m = spec.moment_dim();
  switch (scheme.kind) {
    case WeightKind::Identity:
      return WeightMatrix{Matrix::Identity(m, m), WeightKind::Identity};
    case WeightKind::InstrumentOuter:
    case WeightKind::TauScaledInstrumentOuter: {
      if (spec.is_location()) throw Error("instrument weight schemes need instrument columns");
      Matrix target = population_instrument_second_moment();
      if (scheme.kind == WeightKind::TauScaledInstrumentOuter) target *= spec.tau * (1.0 - spec.tau);
      return invert_weight_target(target, scheme.kind, scheme.ridge_epsilon);
    }
    case WeightKind::EfficientAtPreliminary: {
      if (!prelim) throw Error("efficient weight needs a preliminary estimate");
      const Matrix target = spec.is_location()
                                ? population_location_second_moment(spec, (*prelim)(0), ps.eps_sd(spec))
                                : population_ivqr_second_moment(*prelim, ps.delta, spec.tau);
      return invert_weight_target(target, scheme.kind, scheme.ridge_epsilon);
    }
  }
  throw Error("unhandled weight scheme");
}

// ---------------------------------------------------------------------------
// Pseudo-true value

struct PseudoTrueResult {
  ParamPoint theta_star;
  double q0_star = 0.0;
  std::string method;
  int multistart_count = 0;
  bool flat_region = false;
};

struct SimplexOptions {
  double f_tol = 1e-10;
  double x_tol = 1e-8;
  int max_iter = 10000;
};

struct SimplexResult {
  ParamPoint x;
  double f = 0.0;
  int iterations = 0;
};

/// Nelder-Mead on a box: vertices are clamped into the box. Stops once the
/// spread of values is <= f_tol and the simplex fits in an x_tol cube, then
/// restarts once from the best vertex to guard against a collapsed simplex.
inline SimplexResult nelder_mead(const std::function<double(const ParamPoint&)>& f, ParamPoint start,
                                 const ParamBox& box, double initial_step, const SimplexOptions& opt = {}) {
  const auto d = start.size();
  auto clamp = [&](ParamPoint p) {
    for (Eigen::Index k = 0; k < d; ++k) p(k) = std::clamp(p(k), box.lo, box.hi);
    return p;
  };
  SimplexResult res;
  res.x = clamp(std::move(start));
  res.f = f(res.x);
  for (int round = 0; round < 2; ++round) {
    std::vector<ParamPoint> v(d + 1, res.x);
    std::vector<double> fv(d + 1, res.f);
    const double step = round == 0 ? initial_step : std::max(100.0 * opt.x_tol, 1e-4);
    for (Eigen::Index k = 0; k < d; ++k) {
      ParamPoint p = res.x;
      p(k) += p(k) + step <= box.hi ? step : -step;
      v[k + 1] = clamp(p);
      fv[k + 1] = f(v[k + 1]);
    }
    std::vector<std::size_t> idx(d + 1);
    for (int it = 0; it < opt.max_iter; ++it, ++res.iterations) {
      for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
      std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return fv[a] < fv[b]; });
      const std::size_t best = idx.front(), worst = idx.back(), second = idx[idx.size() - 2];
      double diam = 0.0;
      for (const auto& p : v) diam = std::max(diam, (p - v[best]).cwiseAbs().maxCoeff());
      if (fv[worst] - fv[best] <= opt.f_tol && diam <= opt.x_tol) break;

      ParamPoint centroid = ParamPoint::Zero(d);
      for (std::size_t k = 0; k < v.size(); ++k)
        if (k != worst) centroid += v[k];
      centroid /= static_cast<double>(d);
      const ParamPoint xr = clamp(centroid + (centroid - v[worst]));
      const double fr = f(xr);
      if (fr < fv[best]) {
        const ParamPoint xe = clamp(centroid + 2.0 * (centroid - v[worst]));
        const double fe = f(xe);
        if (fe < fr) {
          v[worst] = xe;
          fv[worst] = fe;
        } else {
          v[worst] = xr;
          fv[worst] = fr;
        }
        continue;
      }
      if (fr < fv[second]) {
        v[worst] = xr;
        fv[worst] = fr;
        continue;
      }
      const bool outside = fr < fv[worst];
      const ParamPoint xc = outside ? ParamPoint(clamp(centroid + 0.5 * (xr - centroid)))
                                    : ParamPoint(centroid + 0.5 * (v[worst] - centroid));
      const double fc = f(xc);
      if (fc < std::min(fr, fv[worst])) {
        v[worst] = xc;
        fv[worst] = fc;
        continue;
      }
      for (std::size_t k = 0; k < v.size(); ++k) {
        if (k == best) continue;
        v[k] = v[best] + 0.5 * (v[k] - v[best]);
        fv[k] = f(v[k]);
      }
    }
    const auto it = std::min_element(fv.begin(), fv.end());
    res.x = v[static_cast<std::size_t>(it - fv.begin())];
    res.f = *it;
  }
  return res;
}

/// Gauss-Newton refinement of an interior minimizer through the stationarity
/// condition J' W pi = 0, with J by central differences. Near the minimum the
/// criterion is flat to round-off long before theta is pinned down, so the
/// simplex alone cannot place theta to 1e-8. Returns nullopt when the step
/// leaves the box, the system is singular, or the gradient does not shrink.
inline std::optional<ParamPoint> gauss_newton_polish(const std::function<Vector(const ParamPoint&)>& pi,
                                                     const Matrix& w, ParamPoint x, const ParamBox& box) {
  const auto d = x.size();
  auto inside = [&](const ParamPoint& p) { return (p.array() > box.lo).all() && (p.array() < box.hi).all(); };
  auto jacobian = [&](const ParamPoint& p) -> std::optional<Matrix> {
    Matrix j;
    for (Eigen::Index k = 0; k < d; ++k) {
      const double h = 1e-5 * std::max(1.0, std::abs(p(k)));
      ParamPoint up = p, dn = p;
      up(k) += h;
      dn(k) -= h;
      if (!inside(up) || !inside(dn)) return std::nullopt;
      const Vector col = (pi(up) - pi(dn)) / (2.0 * h);
      if (k == 0) j.resize(col.size(), d);
      j.col(k) = col;
    }
    return j;
  };
  const ParamPoint start = x;
  double grad0 = INFINITY;
  for (int it = 0; it < 100; ++it) {
    const auto j = jacobian(x);
    if (!j) return std::nullopt;
    const Vector g = j->transpose() * w * pi(x);
    const double grad = g.cwiseAbs().maxCoeff();
    if (it == 0) grad0 = grad;
    const Eigen::LDLT<Matrix> a(j->transpose() * w * *j);
    if (a.info() != Eigen::Success || !(a.vectorD().array() > 0.0).all()) return std::nullopt;
    const ParamPoint step = a.solve(g);
    x -= step;
    if (!inside(x) || (x - start).cwiseAbs().maxCoeff() > 1e-3) return std::nullopt;
    if (step.cwiseAbs().maxCoeff() <= 1e-14 * std::max(1.0, x.cwiseAbs().maxCoeff())) break;
  }
  const auto j = jacobian(x);
  if (!j || (j->transpose() * w * pi(x)).cwiseAbs().maxCoeff() > grad0) return std::nullopt;
  return x;
}

/// Minimizer of pi(theta)' W0 pi(theta) over the box. Starts: 16 equispaced
/// points for a scalar parameter, a 4 x 4 lattice for (alpha, beta); each
/// lattice uses the cell midpoints of an even split of the box.
inline PseudoTrueResult pseudo_true(const MomentSpec& spec, const PopulationSetting& ps, const WeightMatrix& w0,
                                    const ParamBox& box = {}, const SimplexOptions& opt = {}) {
  box.validate();
  const int m = spec.moment_dim();
  if (w0.matrix.rows() != m || w0.matrix.cols() != m) throw Error("weight dimension differs from moment dimension");
  const auto q0 = [&](const ParamPoint& t) { return criterion(population_moments(spec, t, ps), w0.matrix); };

  std::vector<ParamPoint> starts;
  const int d = spec.param_dim();
  const int per_axis = d == 1 ? 16 : 4;
  const double width = (box.hi - box.lo) / per_axis;
  for (int i = 0; i < per_axis; ++i) {
    if (d == 1) {
      starts.push_back(ParamPoint::Constant(1, box.lo + (i + 0.5) * width));
      continue;
    }
    for (int j = 0; j < per_axis; ++j) {
      ParamPoint p(2);
      p << box.lo + (i + 0.5) * width, box.lo + (j + 0.5) * width;
      starts.push_back(p);
    }
  }

  std::vector<SimplexResult> runs;
  for (const auto& s : starts) runs.push_back(nelder_mead(q0, s, box, 0.5 * width, opt));
  auto lex_less = [](const ParamPoint& a, const ParamPoint& b) {
    return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
  };
  const auto best = std::min_element(runs.begin(), runs.end(), [&](const SimplexResult& a, const SimplexResult& b) {
    return a.f < b.f || (a.f == b.f && lex_less(a.x, b.x));
  });

  PseudoTrueResult out;
  out.theta_star = best->x;
  out.q0_star = best->f;
  const auto pi = [&](const ParamPoint& t) { return population_moments(spec, t, ps); };
  if (const auto polished = gauss_newton_polish(pi, w0.matrix, best->x, box)) {
    const double q = q0(*polished);
    if (q <= best->f + 1e-14 * std::max(1.0, best->f)) {
      out.theta_star = *polished;
      out.q0_star = q;
    }
  }
  out.multistart_count = static_cast<int>(starts.size());
  out.method = (spec.is_location() ? std::string("closed-form") : ps.rule.describe()) + "/nelder-mead";
  for (const auto& r : runs)
    if (r.f - best->f < opt.f_tol && (r.x - best->x).cwiseAbs().maxCoeff() > 1e-4) out.flat_region = true;
  return out;
}

/// Pseudo-true value of a whole pipeline. One-step: the minimizer under the
/// scheme's population weight. Two-step: the minimizer under the efficient
/// weight built at the one-step pseudo-true value.
inline PseudoTrueResult pseudo_true_pipeline(const MomentSpec& spec, const PopulationSetting& ps,
                                             const WeightScheme& scheme, bool two_step, const ParamBox& box = {}) {
  const auto first = pseudo_true(spec, ps, population_weight(scheme, spec, ps), box);
  if (!two_step) return first;
  const auto w = population_weight({WeightKind::EfficientAtPreliminary, scheme.ridge_epsilon}, spec, ps,
                                   first.theta_star);
  return pseudo_true(spec, ps, w, box);
}

// ---------------------------------------------------------------------------
// Exactly identified transformation

/// Two instruments combined into pi1 Z1 + pi2 Z2. Z1 alone identifies
/// beta0, Z2 alone identifies beta_star.
struct TransformInputs {
  double pi1 = 0.0;
  double pi2 = 0.0;
  double ez1d = 0.0;
  double ez2d = 0.0;
  double beta0 = 0.0;
  double beta_star = 0.0;
};

/// Solution of E[(pi1 Z1 + pi2 Z2)(Y - D beta)] = 0: a weighted average of
/// the two single-instrument estimands with weights pi_k E[Z_k D].
inline double transformed_beta(const TransformInputs& t) {
  const double w1 = t.pi1 * t.ez1d;
  const double w2 = t.pi2 * t.ez2d;
  const double den = w1 + w2;
  if (den == 0.0 || !std::isfinite(den)) throw Error("transformed_beta: zero denominator");
  // a single active instrument returns its own estimand exactly
  if (w2 == 0.0) return t.beta0;
  if (w1 == 0.0) return t.beta_star;
  return (w1 * t.beta0 + w2 * t.beta_star) / den;
}

}  // namespace nsgmm

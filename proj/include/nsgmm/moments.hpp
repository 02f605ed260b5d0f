#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <vector>

#include <Eigen/Eigenvalues>

#include "nsgmm/dataset.hpp"
#include "nsgmm/sampling.hpp"
#include "nsgmm/types.hpp"

namespace nsgmm {

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }
inline double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

/// Variance restriction used by g2/g3/g4: E[(y - theta)^2] = 4.
inline constexpr double kLocationVariance = 4.0;

inline void check_location_inputs(const MomentSpec& spec, const Dataset& data) {
  if (!spec.is_location()) throw Error("expected a location moment family");
  if (data.size() < 1) throw Error("empty dataset");
  if (spec.needs_covariates() && data.covariates.cols() != 5)
    throw Error("families g3/g4 need the five x columns");
}

inline void check_ivqr_inputs(const Dataset& data) {
  if (data.size() < 1) throw Error("empty dataset");
  if (!data.is_ivqr()) throw Error("IVQR moments need y, D and W columns");
}

/// Per-observation location moments g(X_i, theta), one row per observation.
/// Row layout: [1(y <= theta) - tau], y - theta, (y - theta)^2 - 4, x - (0.5 - tau);
/// g1 keeps the first two, g2 the first three, g4 drops the indicator.
inline Matrix location_moment_matrix(const MomentSpec& spec, const Dataset& data, double theta) {
  check_location_inputs(spec, data);
  const auto n = data.size();
  Matrix g(n, spec.moment_dim());
  const Vector r = data.outcome.array() - theta;
  int c = 0;
  if (spec.has_indicator()) {
    for (Eigen::Index i = 0; i < n; ++i) g(i, c) = (data.outcome(i) <= theta ? 1.0 : 0.0) - spec.tau;
    ++c;
  }
  g.col(c++) = r;
  if (spec.family != Family::LocationG1) g.col(c++) = r.array().square() - kLocationVariance;
  if (spec.needs_covariates()) g.rightCols(5) = data.covariates.array() - (0.5 - spec.tau);
  return g;
}

inline Vector eval_location(const MomentSpec& spec, const Dataset& data, double theta) {
  return location_moment_matrix(spec, data, theta).colwise().mean().transpose();
}

/// Per-observation IVQR moments (tau - 1(y_i <= alpha + beta D_i)) z_i.
inline Matrix ivqr_moment_matrix(const Dataset& data, const ParamPoint& theta, double tau) {
  check_ivqr_inputs(data);
  if (theta.size() != 2) throw Error("IVQR parameter must be (alpha, beta)");
  Matrix g = data.instruments;
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    const bool below = data.outcome(i) <= theta(0) + theta(1) * data.regressor(i);
    g.row(i) *= tau - (below ? 1.0 : 0.0);
  }
  return g;
}

inline Vector eval_ivqr(const Dataset& data, const ParamPoint& theta, double tau) {
  return ivqr_moment_matrix(data, theta, tau).colwise().mean().transpose();
}

inline Matrix moment_matrix(const MomentSpec& spec, const Dataset& data, const ParamPoint& theta) {
  if (spec.is_location()) {
    if (theta.size() != 1) throw Error("location parameter must be scalar");
    return location_moment_matrix(spec, data, theta(0));
  }
  return ivqr_moment_matrix(data, theta, spec.tau);
}

inline Vector eval_moments(const MomentSpec& spec, const Dataset& data, const ParamPoint& theta) {
  return moment_matrix(spec, data, theta).colwise().mean().transpose();
}

// ---------------------------------------------------------------------------
// Population moments

/// Closed-form E[g(X, theta)] under y = eps, eps ~ N(0, eps_sd^2), E[x] = 0.
inline Vector population_location(const MomentSpec& spec, double theta, double eps_sd = 2.0) {
  if (!spec.is_location()) throw Error("expected a location moment family");
  Vector pi(spec.moment_dim());
  int c = 0;
  if (spec.has_indicator()) pi(c++) = normal_cdf(theta / eps_sd) - spec.tau;
  pi(c++) = -theta;
  if (spec.family != Family::LocationG1) pi(c++) = eps_sd * eps_sd + theta * theta - kLocationVariance;
  if (spec.needs_covariates()) pi.tail(5).setConstant(spec.tau - 0.5);
  return pi;
}

/// Nodes and weights of the probabilists' Gauss-Hermite rule, normalized so
/// that sum_k w_k f(x_k) approximates E[f(Z)] for Z ~ N(0, 1).
struct GaussHermite {
  Vector nodes;
  Vector weights;

  explicit GaussHermite(int m) {
    if (m < 1) throw Error("Gauss-Hermite rule needs at least one node");
    Matrix jacobi = Matrix::Zero(m, m);
    for (int k = 1; k < m; ++k) jacobi(k, k - 1) = jacobi(k - 1, k) = std::sqrt(static_cast<double>(k));
    Eigen::SelfAdjointEigenSolver<Matrix> eig(jacobi);
    nodes = eig.eigenvalues();
    weights = eig.eigenvectors().row(0).transpose().array().square();
  }
};

/// Per-thread cache; the rules are deterministic functions of m.
inline const GaussHermite& gauss_hermite(int m) {
  thread_local std::map<int, GaussHermite> cache;
  auto it = cache.find(m);
  if (it == cache.end()) it = cache.emplace(m, GaussHermite(m)).first;
  return it->second;
}

struct QuadratureRule {
  enum class Kind { GaussHermite, MonteCarlo };
  Kind kind = Kind::GaussHermite;
  int nodes = 64;
  long draws = 1'000'000;
  std::uint64_t seed = 7;

  static QuadratureRule monte_carlo(long draws, std::uint64_t seed) {
    return {Kind::MonteCarlo, 0, draws, seed};
  }
  std::string describe() const {
    return kind == Kind::GaussHermite ? "gauss-hermite-" + std::to_string(nodes) + "x" + std::to_string(nodes)
                                      : "monte-carlo-" + std::to_string(draws);
  }
};

/// E[(tau - Phi((alpha - 1 + (beta - 1) D + (2/3 D - 4/3 W) delta) / s)) z],
/// s = sqrt(1 - 4/3 delta^2), over (D, W) ~ N(0, [[1, .5], [.5, 1]]).
inline Vector population_ivqr(const ParamPoint& theta, double delta, double tau,
                              const QuadratureRule& rule = {}) {
  check_ivqr_delta(delta);
  if (theta.size() != 2) throw Error("IVQR parameter must be (alpha, beta)");
  const double s = std::sqrt(1.0 - 4.0 / 3.0 * delta * delta);
  const double a = theta(0) - kIvqrAlpha0;
  const double b = theta(1) - kIvqrBeta0;
  const double c_w = std::sqrt(0.75);
  auto integrand = [&](double d, double w, Vector& acc, double weight) {
    const double arg = (a + b * d + (2.0 / 3.0 * d - 4.0 / 3.0 * w) * delta) / s;
    const double m = weight * (tau - normal_cdf(arg));
    acc(0) += m;
    acc(1) += m * d;
    acc(2) += m * w;
  };
  Vector pi = Vector::Zero(3);
  if (rule.kind == QuadratureRule::Kind::GaussHermite) {
    const GaussHermite& gh = gauss_hermite(rule.nodes);
    for (int i = 0; i < rule.nodes; ++i)
      for (int j = 0; j < rule.nodes; ++j) {
        const double d = gh.nodes(i);
        const double w = 0.5 * d + c_w * gh.nodes(j);
        integrand(d, w, pi, gh.weights(i) * gh.weights(j));
      }
    return pi;
  }
  Rng rng(rule.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (long k = 0; k < rule.draws; ++k) {
    const double d = normal(rng);
    const double w = 0.5 * d + c_w * normal(rng);
    integrand(d, w, pi, 1.0);
  }
  return pi / static_cast<double>(rule.draws);
}

}  // namespace nsgmm

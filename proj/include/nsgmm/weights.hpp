#pragma once

#include <limits>
#include <optional>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "nsgmm/dataset.hpp"
#include "nsgmm/moments.hpp"
#include "nsgmm/types.hpp"

namespace nsgmm {

class WeightSingularError : public Error {
 public:
  explicit WeightSingularError(const std::string& what) : Error(what) {}
  /// Set by the two-step pipeline: the first-stage fit the weight was built at.
  std::optional<GmmFit> preliminary;
};

/// Largest accepted condition number of a weight target.
inline constexpr double kMaxWeightCondition = 1e14;

/// Inverts a symmetric positive definite target. Targets whose spectrum is
/// worse than kMaxWeightCondition are rejected; targets that pass that check
/// but still fail Cholesky get a ridge of eps * (trace / dim) * I.
inline WeightMatrix invert_weight_target(const Matrix& target, WeightKind kind, double ridge_epsilon) {
  const auto m = target.rows();
  if (m < 1 || target.cols() != m) throw Error("weight target must be square");
  if (!target.allFinite()) throw WeightSingularError("weight singular: non-finite target");
  const Matrix sym = 0.5 * (target + target.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym, Eigen::EigenvaluesOnly);
  const double lmin = eig.eigenvalues().minCoeff();
  const double lmax = eig.eigenvalues().maxCoeff();
  const double cond = lmin > 0.0 ? lmax / lmin : std::numeric_limits<double>::infinity();
  if (!(lmax > 0.0) || cond > kMaxWeightCondition) throw WeightSingularError("weight singular");

  WeightMatrix out;
  out.kind = kind;
  out.condition = cond;
  Eigen::LLT<Matrix> llt(sym);
  if (llt.info() != Eigen::Success) {
    const Matrix ridged = sym + ridge_epsilon * (sym.trace() / static_cast<double>(m)) * Matrix::Identity(m, m);
    llt.compute(ridged);
    if (llt.info() != Eigen::Success) throw WeightSingularError("weight singular");
    out.ridge_applied = true;
  }
  Matrix inv = llt.solve(Matrix::Identity(m, m));
  out.matrix = 0.5 * (inv + inv.transpose());
  return out;
}

inline Matrix instrument_second_moment(const Dataset& data) {
  if (!data.has_instruments()) throw Error("instrument weight schemes need instrument columns");
  return data.instruments.transpose() * data.instruments / static_cast<double>(data.size());
}

/// Builds the weight matrix for `scheme`. `prelim` is required (and only
/// used) by EfficientAtPreliminary.
inline WeightMatrix build_weight(const WeightScheme& scheme, const MomentSpec& spec, const Dataset& data,
                                 const std::optional<ParamPoint>& prelim = std::nullopt) {
  const int m = spec.moment_dim();
  switch (scheme.kind) {
    case WeightKind::Identity: {
      WeightMatrix w;
      w.matrix = Matrix::Identity(m, m);
      w.kind = WeightKind::Identity;
      return w;
    }
    case WeightKind::InstrumentOuter:
    case WeightKind::TauScaledInstrumentOuter: {
      Matrix target = instrument_second_moment(data);
      if (target.rows() != m) throw Error("instrument dimension differs from moment dimension");
      if (scheme.kind == WeightKind::TauScaledInstrumentOuter) target *= spec.tau * (1.0 - spec.tau);
      return invert_weight_target(target, scheme.kind, scheme.ridge_epsilon);
    }
    case WeightKind::EfficientAtPreliminary: {
      if (!prelim) throw Error("efficient weight needs a preliminary estimate");
      const Matrix g = moment_matrix(spec, data, *prelim);
      const Matrix target = g.transpose() * g / static_cast<double>(data.size());
      return invert_weight_target(target, scheme.kind, scheme.ridge_epsilon);
    }
  }
  throw Error("unhandled weight scheme");
}

/// gbar' W gbar.
inline double criterion(const Vector& gbar, const Matrix& w) {
  if (w.rows() != gbar.size() || w.cols() != gbar.size()) throw Error("criterion: dimension mismatch");
  return std::max(0.0, gbar.dot(w * gbar));
}

}  // namespace nsgmm

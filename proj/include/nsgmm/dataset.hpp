#pragma once

#include <string>
#include <vector>

#include "nsgmm/types.hpp"

namespace nsgmm {

/// Column store for one sample. Roles:
///   outcome     y (always present)
///   regressor   D, the endogenous regressor (IVQR only)
///   covariates  x, n x 5 exogenous columns (location g3/g4)
///   instruments z, n x k rows z_i (IVQR: (1, D_i, W_i))
struct Dataset {
  Vector outcome;
  Vector regressor;
  Matrix covariates;
  Matrix instruments;

  Eigen::Index size() const { return outcome.size(); }
  bool has_regressor() const { return regressor.size() > 0; }
  bool has_covariates() const { return covariates.cols() > 0; }
  bool has_instruments() const { return instruments.cols() > 0; }

  void validate() const {
    const auto n = outcome.size();
    if (n < 1) throw Error("dataset must hold at least one observation");
    if (has_regressor() && regressor.size() != n) throw Error("regressor column length differs from outcome");
    if (has_covariates() && covariates.rows() != n) throw Error("covariate columns length differs from outcome");
    if (has_instruments() && instruments.rows() != n) throw Error("instrument rows differ from outcome length");
  }

  static Dataset location(Vector y, Matrix x = Matrix()) {
    Dataset d;
    d.outcome = std::move(y);
    d.covariates = std::move(x);
    d.validate();
    return d;
  }

  /// IVQR sample: outcome y, endogenous D and excluded instrument W.
  static Dataset ivqr(Vector y, Vector d, const Vector& w) {
    Dataset out;
    const auto n = y.size();
    if (d.size() != n || w.size() != n) throw Error("IVQR columns y, D, W must have equal length");
    out.instruments.resize(n, 3);
    out.instruments.col(0).setOnes();
    out.instruments.col(1) = d;
    out.instruments.col(2) = w;
    out.outcome = std::move(y);
    out.regressor = std::move(d);
    out.validate();
    return out;
  }

  bool is_ivqr() const { return has_regressor() && instruments.cols() == 3; }

  /// Header names and values in the dump/solve CSV layout.
  std::vector<std::string> column_names() const {
    std::vector<std::string> names{"y"};
    if (is_ivqr()) {
      names.push_back("D");
      names.push_back("W");
    } else {
      for (Eigen::Index j = 0; j < covariates.cols(); ++j) names.push_back("x" + std::to_string(j + 1));
    }
    return names;
  }

  Matrix table() const {
    const auto names = column_names();
    Matrix t(size(), static_cast<Eigen::Index>(names.size()));
    t.col(0) = outcome;
    if (is_ivqr()) {
      t.col(1) = regressor;
      t.col(2) = instruments.col(2);
    } else if (has_covariates()) {
      t.rightCols(covariates.cols()) = covariates;
    }
    return t;
  }
};

}  // namespace nsgmm

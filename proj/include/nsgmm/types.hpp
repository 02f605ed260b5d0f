#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace nsgmm {

#ifdef NSGMM_VERSION
inline constexpr const char* kArtifactVersion = NSGMM_VERSION;
#else
inline constexpr const char* kArtifactVersion = "0.1.0";
#endif

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Parameter value: scalar theta for location families, (alpha, beta) for IVQR.
using ParamPoint = Eigen::VectorXd;

enum class Family { LocationG1, LocationG2, LocationG3, LocationG4, Ivqr };

/// A moment family together with the quantile level it is evaluated at.
struct MomentSpec {
  Family family = Family::LocationG1;
  double tau = 0.5;

  int moment_dim() const {
    switch (family) {
      case Family::LocationG1: return 2;
      case Family::LocationG2: return 3;
      case Family::LocationG3: return 8;
      case Family::LocationG4: return 7;
      case Family::Ivqr: return 3;
    }
    return 0;
  }
  int param_dim() const { return family == Family::Ivqr ? 2 : 1; }
  bool is_location() const { return family != Family::Ivqr; }
  bool has_indicator() const { return family != Family::LocationG4; }
  bool needs_covariates() const {
    return family == Family::LocationG3 || family == Family::LocationG4;
  }

  static MomentSpec location(int g, double tau) {
    if (g < 1 || g > 4) throw Error("location family must be g1..g4");
    if (!(tau > 0.0 && tau < 1.0)) throw Error("tau must lie in (0, 1)");
    return {static_cast<Family>(g - 1), tau};
  }
  static MomentSpec ivqr(double tau) {
    if (!(tau > 0.0 && tau < 1.0)) throw Error("tau must lie in (0, 1)");
    return {Family::Ivqr, tau};
  }
};

inline std::string family_name(Family f) {
  switch (f) {
    case Family::LocationG1: return "g1";
    case Family::LocationG2: return "g2";
    case Family::LocationG3: return "g3";
    case Family::LocationG4: return "g4";
    case Family::Ivqr: return "ivqr";
  }
  return "?";
}

inline Family parse_family(const std::string& s) {
  if (s == "g1") return Family::LocationG1;
  if (s == "g2") return Family::LocationG2;
  if (s == "g3") return Family::LocationG3;
  if (s == "g4") return Family::LocationG4;
  if (s == "ivqr") return Family::Ivqr;
  throw Error("unknown moment family '" + s + "'");
}

/// Hypercube [lo, hi]^param_dim searched by the exact optimizers.
struct ParamBox {
  double lo = -10.0;
  double hi = 10.0;

  void validate() const {
    if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi))
      throw Error("parameter box must satisfy finite lo < hi");
  }
  bool contains(double v) const { return v >= lo && v <= hi; }
};

enum class WeightKind { Identity, InstrumentOuter, TauScaledInstrumentOuter, EfficientAtPreliminary };

inline std::string weight_name(WeightKind k) {
  switch (k) {
    case WeightKind::Identity: return "identity";
    case WeightKind::InstrumentOuter: return "instrument";
    case WeightKind::TauScaledInstrumentOuter: return "tau-scaled";
    case WeightKind::EfficientAtPreliminary: return "efficient";
  }
  return "?";
}

inline WeightKind parse_weight(const std::string& s) {
  if (s == "identity") return WeightKind::Identity;
  if (s == "instrument") return WeightKind::InstrumentOuter;
  if (s == "tau-scaled") return WeightKind::TauScaledInstrumentOuter;
  if (s == "efficient") return WeightKind::EfficientAtPreliminary;
  throw Error("unknown weight scheme '" + s + "'");
}

struct WeightScheme {
  WeightKind kind = WeightKind::Identity;
  double ridge_epsilon = 1e-10;
};

/// A realized weight matrix. `ridge_applied` is set when the target needed
/// a diagonal shift before it could be factorized.
struct WeightMatrix {
  Matrix matrix;
  WeightKind kind = WeightKind::Identity;
  bool ridge_applied = false;
  double condition = 1.0;
};

/// Identifies the region of parameter space that holds the reported minimizer.
/// 1-D: `interval` is the order-statistic interval index k (theta in
/// [y_(k), y_(k+1)), k = 0 meaning below every observation).
/// 2-D: `interval` is the slope-interval index (number of processed swap
/// events when the cell piece was opened) and `rank` is the prefix size p;
/// the piece is bounded below by `lower_line` and above by `upper_line`
/// (-1 when unbounded) for beta in [slope_lo, slope_hi].
struct CellDescriptor {
  long interval = 0;
  long rank = 0;
  ParamPoint representative;
  long lower_line = -1;
  long upper_line = -1;
  double slope_lo = 0.0;
  double slope_hi = 0.0;
};

struct FitDiagnostics {
  CellDescriptor cell;
  long tied_cells = 0;
  long events = 0;
  bool brute_force_fallback = false;
  std::string solver;
};

struct GmmFit {
  ParamPoint theta_hat;
  double q_hat = 0.0;
  WeightMatrix weight_used;
  FitDiagnostics diagnostics;
};

}  // namespace nsgmm

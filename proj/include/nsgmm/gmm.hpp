#pragma once

#include <optional>

#include "nsgmm/dataset.hpp"
#include "nsgmm/ivqr_sweep.hpp"
#include "nsgmm/location_opt.hpp"
#include "nsgmm/moments.hpp"
#include "nsgmm/weights.hpp"

namespace nsgmm {

/// Exact minimizer under a fixed, already realized weight.
inline GmmFit fit_with_weight(const MomentSpec& spec, const Dataset& data, const WeightMatrix& weight,
                              const ParamBox& box = {}) {
  if (spec.is_location()) return minimize_location(spec, data, weight, box);
  return minimize_ivqr_sweep(data, spec.tau, weight, box);
}

/// One-step GMM: argmin gbar' W gbar with a parameter-free weight.
inline GmmFit fit_one_step(const MomentSpec& spec, const Dataset& data, const WeightScheme& scheme,
                           const ParamBox& box = {}) {
  if (scheme.kind == WeightKind::EfficientAtPreliminary)
    throw Error("one-step GMM needs a parameter-free weight scheme");
  return fit_with_weight(spec, data, build_weight(scheme, spec, data), box);
}

struct TwoStepFit {
  GmmFit first;
  GmmFit second;
};

/// Two-step efficient GMM: the weight (n^-1 sum g g')^-1 is built at the
/// one-step estimate and held fixed while the criterion is re-minimized.
inline TwoStepFit fit_two_step_detailed(const MomentSpec& spec, const Dataset& data, const WeightScheme& first_scheme,
                                        const ParamBox& box = {}) {
  TwoStepFit out;
  out.first = fit_one_step(spec, data, first_scheme, box);
  WeightMatrix efficient;
  try {
    efficient = build_weight({WeightKind::EfficientAtPreliminary, first_scheme.ridge_epsilon}, spec, data,
                             out.first.theta_hat);
  } catch (WeightSingularError& e) {
    e.preliminary = out.first;
    throw;
  }
  out.second = fit_with_weight(spec, data, efficient, box);
  return out;
}

inline GmmFit fit_two_step(const MomentSpec& spec, const Dataset& data, const WeightScheme& first_scheme,
                           const ParamBox& box = {}) {
  return fit_two_step_detailed(spec, data, first_scheme, box).second;
}

}  // namespace nsgmm

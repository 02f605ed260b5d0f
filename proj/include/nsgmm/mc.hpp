#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <mutex>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "nsgmm/gmm.hpp"
#include "nsgmm/io.hpp"
#include "nsgmm/population.hpp"
#include "nsgmm/sampling.hpp"

namespace nsgmm {

/// One Monte Carlo design: a model, a DGP setting, an estimation pipeline
/// and the (n, replication) grid.
struct Scenario {
  std::string scenario_id;
  MomentSpec spec;
  double delta = 0.0;  // IVQR only
  JointEpsilonScale scale = JointEpsilonScale::Scaled;  // location g3/g4 only
  WeightScheme weight{};  // the one-step scheme, or the first stage of two-step
  bool two_step = false;
  std::vector<long> n_grid;
  long reps = 0;
  std::uint64_t base_seed = 0;
  ParamBox box{};

  std::string step_name() const { return two_step ? "two-step" : "one-step"; }

  void validate() const {
    if (scenario_id.empty()) throw Error("scenario_id must not be empty");
    if (scenario_id.find_first_of(",/\\ \t\n") != std::string::npos)
      throw Error("scenario_id '" + scenario_id + "' contains a separator character");
    if (!(spec.tau > 0.0 && spec.tau < 1.0)) throw Error("tau must lie in (0, 1)");
    if (n_grid.empty()) throw Error("n_grid must not be empty");
    for (std::size_t k = 0; k < n_grid.size(); ++k) {
      if (n_grid[k] < 1) throw Error("n_grid entries must be positive");
      if (k > 0 && n_grid[k] <= n_grid[k - 1]) throw Error("n_grid must be strictly increasing");
    }
    if (reps < 2) throw Error("reps must be at least 2");
    if (!two_step && weight.kind == WeightKind::EfficientAtPreliminary)
      throw Error("one-step pipelines need a parameter-free weight");
    if (two_step && weight.kind == WeightKind::EfficientAtPreliminary)
      throw Error("the first stage of a two-step pipeline needs a parameter-free weight");
    if (spec.is_location() && weight.kind != WeightKind::Identity && weight.kind != WeightKind::EfficientAtPreliminary)
      throw Error("location models have no instruments; use the identity weight");
    if (!spec.is_location()) check_ivqr_delta(delta);
    box.validate();
  }

  PopulationSetting population() const { return {delta, scale, {}}; }

  std::vector<std::string> component_names() const {
    if (spec.is_location()) return {"theta"};
    return {"alpha", "beta"};
  }

  /// theta_0 of the DGP.
  ParamPoint true_value() const {
    if (spec.is_location()) return ParamPoint::Zero(1);
    ParamPoint p(2);
    p << kIvqrAlpha0, kIvqrBeta0;
    return p;
  }

  SeedSpec seed(long n, long rep) const {
    return SeedSpec{base_seed, scenario_id + "/n=" + std::to_string(n), static_cast<std::uint64_t>(rep)};
  }

  Dataset generate(long n, long rep) const {
    if (spec.is_location()) return gen_location(n, spec.family, seed(n, rep), scale);
    return gen_ivqr(n, delta, seed(n, rep));
  }

  ParamPoint estimate(const Dataset& data) const {
    if (two_step) return fit_two_step(spec, data, weight, box).theta_hat;
    return fit_one_step(spec, data, weight, box).theta_hat;
  }
};

/// Unbiased sample variance (divisor R - 1), two-pass.
inline double estimator_variance(const std::vector<double>& v) {
  if (v.size() < 2) throw Error("estimator_variance needs at least two estimates");
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return ss / static_cast<double>(v.size() - 1);
}

struct Replicate {
  long n = 0;
  long rep = 0;
  bool ok = false;
  std::string reason;  // set when !ok
  ParamPoint theta;
};

struct CellStats {
  std::string scenario_id;
  long n = 0;
  int component = 0;
  long reps = 0;  // recorded replications
  long excluded = 0;
  double mean = 0.0;
  double bias = 0.0;
  double variance = 0.0;
  double mse = 0.0;
};

/// Where the bias column is measured from.
struct BiasReference {
  ParamPoint value;
  bool correctly_specified = false;  // value is theta_0 rather than a pseudo-true value
  double q0 = 0.0;
};

/// Correct specification is decided at the population level: the pipeline's
/// pseudo-true value attains a zero population criterion.
inline BiasReference bias_reference(const Scenario& s) {
  const auto pt = pseudo_true_pipeline(s.spec, s.population(), s.weight, s.two_step, s.box);
  BiasReference ref;
  ref.q0 = pt.q0_star;
  ref.correctly_specified = pt.q0_star <= 1e-10;
  ref.value = ref.correctly_specified ? s.true_value() : pt.theta_star;
  return ref;
}

struct ScenarioResult {
  Scenario scenario;
  BiasReference reference;
  std::vector<Replicate> raw;  // ordered by (n index, rep)
  std::vector<CellStats> cells;  // ordered by (n index, component)
  bool valid = true;

  long excluded_total() const {
    return std::count_if(raw.begin(), raw.end(), [](const Replicate& r) { return !r.ok; });
  }
};

/// Called after each finished replication with (done, total).
using ProgressFn = std::function<void(long, long)>;

/// Runs every (n, rep) of the scenario on `threads` workers. Each task draws
/// from its own seed stream and writes only its own slot, so the result does
/// not depend on the worker count or completion order.
inline ScenarioResult run_scenario(const Scenario& s, int threads = 0, const ProgressFn& progress = {}) {
  s.validate();
  ScenarioResult out;
  out.scenario = s;
  out.reference = bias_reference(s);

  const long total = static_cast<long>(s.n_grid.size()) * s.reps;
  out.raw.resize(static_cast<std::size_t>(total));
  if (threads <= 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  threads = static_cast<int>(std::min<long>(threads, total));

  std::atomic<long> next{0}, done{0};
  std::mutex progress_mutex;
  auto worker = [&] {
    for (long t = next++; t < total; t = next++) {
      Replicate& r = out.raw[static_cast<std::size_t>(t)];
      r.n = s.n_grid[static_cast<std::size_t>(t / s.reps)];
      r.rep = t % s.reps;
      try {
        r.theta = s.estimate(s.generate(r.n, r.rep));
        r.ok = true;
      } catch (const Error& e) {
        r.ok = false;
        r.reason = e.what();
      }
      const long d = ++done;
      if (progress) {
        std::lock_guard<std::mutex> lock(progress_mutex);
        progress(d, total);
      }
    }
  };
  std::vector<std::thread> pool;
  for (int k = 1; k < threads; ++k) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  const int dims = s.spec.param_dim();
  for (std::size_t ni = 0; ni < s.n_grid.size(); ++ni) {
    const auto first = out.raw.begin() + static_cast<long>(ni) * s.reps;
    const long excluded = std::count_if(first, first + s.reps, [](const Replicate& r) { return !r.ok; });
    if (static_cast<double>(excluded) > 0.01 * static_cast<double>(s.reps)) out.valid = false;
    for (int c = 0; c < dims; ++c) {
      std::vector<double> v;
      for (auto it = first; it != first + s.reps; ++it)
        if (it->ok) v.push_back(it->theta(c));
      CellStats cs;
      cs.scenario_id = s.scenario_id;
      cs.n = s.n_grid[ni];
      cs.component = c;
      cs.reps = static_cast<long>(v.size());
      cs.excluded = excluded;
      if (v.size() >= 2) {
        double m = 0.0;
        for (double x : v) m += x;
        cs.mean = m / static_cast<double>(v.size());
        cs.bias = cs.mean - out.reference.value(c);
        cs.variance = estimator_variance(v);
        const double r = static_cast<double>(v.size());
        cs.mse = cs.bias * cs.bias + cs.variance * (r - 1.0) / r;
      } else {
        cs.mean = cs.bias = cs.variance = cs.mse = std::nan("");
        out.valid = false;
      }
      out.cells.push_back(cs);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence

inline const char* kResultsHeader =
    "scenario_id,model,family,tau,delta,weight,step,n,reps,excluded,component,mean,bias,variance,mse,seed,rng_id,"
    "artifact_version\n";

inline void write_results_header(std::ostream& out) { out << kResultsHeader; }

inline void write_results_rows(std::ostream& out, const ScenarioResult& r) {
  const Scenario& s = r.scenario;
  const auto names = s.component_names();
  for (const auto& c : r.cells) {
    out << s.scenario_id << ',' << (s.spec.is_location() ? "location" : "ivqr") << ',' << family_name(s.spec.family)
        << ',' << fmt(s.spec.tau) << ',' << fmt(s.spec.is_location() ? 0.0 : s.delta) << ','
        << weight_name(s.weight.kind) << ',' << s.step_name() << ',' << c.n << ',' << c.reps << ',' << c.excluded
        << ',' << names[static_cast<std::size_t>(c.component)] << ',' << fmt(c.mean) << ',' << fmt(c.bias) << ','
        << fmt(c.variance) << ',' << fmt(c.mse) << ',' << s.base_seed << ',' << kRngId << ',' << kArtifactVersion
        << '\n';
  }
}

/// raw_<scenario_id>.csv: one row per (n, rep, component) of every recorded
/// replication. Excluded replications are listed in the run manifest.
inline void write_raw(std::ostream& out, const ScenarioResult& r) {
  const Scenario& s = r.scenario;
  out << meta_line({{"scenario_id", s.scenario_id},
                    {"seed", std::to_string(s.base_seed)},
                    {"rng_id", kRngId},
                    {"artifact_version", kArtifactVersion}});
  out << "n,rep,component,estimate\n";
  const auto names = s.component_names();
  for (const auto& rep : r.raw) {
    if (!rep.ok) continue;
    for (Eigen::Index c = 0; c < rep.theta.size(); ++c)
      out << rep.n << ',' << rep.rep << ',' << names[static_cast<std::size_t>(c)] << ',' << fmt(rep.theta(c)) << '\n';
  }
}

}  // namespace nsgmm

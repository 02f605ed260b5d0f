// nsgmm: exact nonsmooth GMM estimation and Monte Carlo rate experiments.
//
// Exit codes: 0 success, 1 usage/config/input error, 2 a scenario was
// marked invalid (too many failed replications).

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "nsgmm/config.hpp"
#include "nsgmm/gmm.hpp"
#include "nsgmm/io.hpp"
#include "nsgmm/mc.hpp"
#include "nsgmm/population.hpp"
#include "nsgmm/rates.hpp"
#include "nsgmm/sampling.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace nsgmm;

namespace {

constexpr const char* kOptimizerNote =
    "exact global minimization over the parameter box (piecewise-quartic breakpoint scan for location models, "
    "line-arrangement sweep for IVQR)";

json to_json(const Vector& v) {
  json a = json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) a.push_back(v(k));
  return a;
}

json to_json(const Matrix& m) {
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(to_json(Vector(m.row(i).transpose())));
  return a;
}

json fit_json(const GmmFit& fit) {
  const auto& c = fit.diagnostics.cell;
  json diag = {{"solver", fit.diagnostics.solver},
               {"interval", c.interval},
               {"rank", c.rank},
               {"representative", to_json(c.representative)},
               {"tied_cells", fit.diagnostics.tied_cells},
               {"events", fit.diagnostics.events},
               {"brute_force_fallback", fit.diagnostics.brute_force_fallback}};
  if (fit.theta_hat.size() == 2) {
    diag["lower_line"] = c.lower_line;
    diag["upper_line"] = c.upper_line;
    diag["slope_lo"] = c.slope_lo;
    diag["slope_hi"] = c.slope_hi;
  }
  return {{"theta_hat", to_json(fit.theta_hat)},
          {"q_hat", fit.q_hat},
          {"weight", weight_name(fit.weight_used.kind)},
          {"weight_matrix", to_json(fit.weight_used.matrix)},
          {"ridge_applied", fit.weight_used.ridge_applied},
          {"condition", fit.weight_used.condition},
          {"diagnostics", diag}};
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << content;
  if (!out) throw Error("write failed: " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int default_threads() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

// ---------------------------------------------------------------------------
// simulate

struct SimulateArgs {
  std::string config;
  std::string out;
  std::optional<int> threads;
  std::optional<std::uint64_t> seed;
  std::optional<long> reps;
  bool quiet = false;
};

int cmd_simulate(const SimulateArgs& a) {
  RunConfig cfg = load_run_config(a.config);
  json overrides = json::object();
  if (a.seed) {
    for (auto& s : cfg.scenarios) s.base_seed = *a.seed;
    cfg.base_seed = *a.seed;
    overrides["seed"] = *a.seed;
  }
  if (a.reps) {
    for (auto& s : cfg.scenarios) {
      s.reps = *a.reps;
      s.validate();
    }
    overrides["reps"] = *a.reps;
  }
  int threads = cfg.parallelism > 0 ? cfg.parallelism : default_threads();
  if (a.threads) {
    if (*a.threads < 1) throw Error("--threads must be at least 1");
    threads = *a.threads;
    overrides["threads"] = *a.threads;
  }
  const std::string out_dir = !a.out.empty() ? a.out : cfg.output_dir;
  if (out_dir.empty()) throw Error("no output directory: pass --out or set output_dir in the config");
  fs::create_directories(out_dir);

  const auto t0 = std::chrono::steady_clock::now();
  std::ostringstream results;
  write_results_header(results);
  json scenarios = json::array();
  bool all_valid = true;
  for (const auto& s : cfg.scenarios) {
    if (!a.quiet) std::cerr << "scenario " << s.scenario_id << " ..." << std::flush;
    const auto r = run_scenario(s, threads);
    write_results_rows(results, r);
    std::ostringstream raw;
    write_raw(raw, r);
    write_file(fs::path(out_dir) / ("raw_" + s.scenario_id + ".csv"), raw.str());
    json excluded = json::array();
    for (const auto& rep : r.raw)
      if (!rep.ok) excluded.push_back({{"n", rep.n}, {"rep", rep.rep}, {"reason", rep.reason}});
    scenarios.push_back({{"scenario_id", s.scenario_id},
                         {"base_seed", s.base_seed},
                         {"reps", s.reps},
                         {"valid", r.valid},
                         {"excluded", excluded},
                         {"bias_reference",
                          {{"kind", r.reference.correctly_specified ? "true-value" : "pseudo-true"},
                           {"value", to_json(r.reference.value)},
                           {"q0", r.reference.q0}}}});
    all_valid = all_valid && r.valid;
    if (!a.quiet) std::cerr << (r.valid ? " done" : " INVALID") << "\n";
  }
  write_file(fs::path(out_dir) / "results.csv", results.str());
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  json manifest = {{"artifact_version", kArtifactVersion},
                   {"rng_id", kRngId},
                   {"base_seed", cfg.base_seed},
                   {"config_path", a.config},
                   {"config", json::parse(read_file(a.config))},
                   {"overrides", overrides},
                   {"threads", threads},
                   {"optimizer", kOptimizerNote},
                   {"scenarios", scenarios},
                   {"wall_time_seconds", wall}};
  write_file(fs::path(out_dir) / "manifest.json", manifest.dump(2) + "\n");
  return all_valid ? 0 : 2;
}

// ---------------------------------------------------------------------------
// solve

struct SolveArgs {
  std::string model;
  std::string data;
  double tau = 0.5;
  std::optional<double> delta;
  std::string family = "g1";
  std::string weight = "identity";
  std::vector<double> box{-10.0, 10.0};
};

MomentSpec solve_spec(const std::string& model, const std::string& family, double tau) {
  if (model == "ivqr") return MomentSpec::ivqr(tau);
  const Family f = parse_family(family);
  if (f == Family::Ivqr) throw Error("--family must be g1..g4 for the location model");
  return MomentSpec::location(static_cast<int>(f) + 1, tau);
}

int cmd_solve(const SolveArgs& a) {
  const MomentSpec spec = solve_spec(a.model, a.family, a.tau);
  const Dataset data = read_dataset_csv(a.data, a.model == "ivqr");
  const ParamBox box{a.box.at(0), a.box.at(1)};
  json out = {{"model", a.model},
              {"family", family_name(spec.family)},
              {"tau", spec.tau},
              {"n", data.size()},
              {"box", {box.lo, box.hi}}};
  if (a.delta) out["delta"] = *a.delta;
  if (a.weight == "two-step") {
    const auto fit = fit_two_step_detailed(spec, data, {WeightKind::Identity}, box);
    out["step"] = "two-step";
    out["first_stage"] = fit_json(fit.first);
    out.update(fit_json(fit.second));
  } else {
    const WeightKind kind = parse_weight(a.weight);
    if (kind == WeightKind::EfficientAtPreliminary) throw Error("use --weight two-step for the efficient weight");
    out["step"] = "one-step";
    out.update(fit_json(fit_one_step(spec, data, {kind}, box)));
  }
  std::cout << out.dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// pseudo-true

struct PseudoArgs {
  std::string model;
  double tau = 0.5;
  double delta = 0.0;
  std::string family = "g1";
  std::string weight = "identity";
  std::string epsilon_scale = "scaled";
  std::vector<double> box{-10.0, 10.0};
};

int cmd_pseudo_true(const PseudoArgs& a) {
  const MomentSpec spec = solve_spec(a.model, a.family, a.tau);
  PopulationSetting ps;
  ps.delta = a.delta;
  if (a.epsilon_scale == "unit") ps.scale = JointEpsilonScale::Unit;
  else if (a.epsilon_scale != "scaled") throw Error("--epsilon-scale must be 'scaled' or 'unit'");
  if (!spec.is_location()) check_ivqr_delta(a.delta);
  const ParamBox box{a.box.at(0), a.box.at(1)};
  const bool two_step = a.weight == "two-step";
  const WeightScheme scheme{two_step ? WeightKind::Identity : parse_weight(a.weight)};
  if (scheme.kind == WeightKind::EfficientAtPreliminary) throw Error("use --weight two-step for the efficient weight");

  const auto first = pseudo_true(spec, ps, population_weight(scheme, spec, ps), box);
  PseudoTrueResult r = first;
  WeightMatrix w = population_weight(scheme, spec, ps);
  if (two_step) {
    w = population_weight({WeightKind::EfficientAtPreliminary}, spec, ps, first.theta_star);
    r = pseudo_true(spec, ps, w, box);
  }
  json out = {{"model", a.model},
              {"family", family_name(spec.family)},
              {"tau", spec.tau},
              {"weight", a.weight},
              {"theta_star", to_json(r.theta_star)},
              {"q0_star", r.q0_star},
              {"method", r.method},
              {"multistart_count", r.multistart_count},
              {"flat_region", r.flat_region},
              {"weight_matrix", to_json(w.matrix)}};
  if (spec.is_location()) out["epsilon_scale"] = a.epsilon_scale;
  else out["delta"] = a.delta;
  if (two_step) out["first_stage_theta_star"] = to_json(first.theta_star);
  std::cout << out.dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// rates

struct Series {
  std::string scenario_id;
  std::string component;
  std::map<std::string, std::string> meta;
  std::vector<RatePoint> points;
};

int cmd_rates(const std::string& in, const std::string& out_dir) {
  const CsvTable t = read_csv_file(in);
  const int c_id = t.require("scenario_id"), c_n = t.require("n"), c_comp = t.require("component"),
            c_var = t.require("variance");
  const int c_seed = t.column("seed"), c_rng = t.column("rng_id"), c_ver = t.column("artifact_version");
  if (t.rows.empty()) throw Error(in + ": no rows");

  std::vector<Series> series;
  std::map<std::pair<std::string, std::string>, std::size_t> where;
  for (const auto& row : t.rows) {
    const auto key = std::make_pair(row[c_id], row[c_comp]);
    auto it = where.find(key);
    if (it == where.end()) {
      it = where.emplace(key, series.size()).first;
      Series s{row[c_id], row[c_comp], {}, {}};
      s.meta["scenario_id"] = row[c_id];
      s.meta["seed"] = c_seed >= 0 ? row[c_seed] : "unknown";
      s.meta["rng_id"] = c_rng >= 0 ? row[c_rng] : "unknown";
      s.meta["artifact_version"] = c_ver >= 0 ? row[c_ver] : kArtifactVersion;
      series.push_back(std::move(s));
    }
    series[it->second].points.push_back(
        {parse_double(row[c_n], in + ": n"), parse_double(row[c_var], in + ": variance")});
  }

  std::ostringstream rates;
  write_rates_header(rates);
  std::map<std::string, std::ostringstream> decay;
  std::vector<std::string> decay_order;
  for (auto& s : series) {
    std::sort(s.points.begin(), s.points.end(), [](const RatePoint& a, const RatePoint& b) { return a.n < b.n; });
    RateFit f;
    try {
      f = fit_rate(s.points);
    } catch (const Error& e) {
      throw Error("scenario " + s.scenario_id + " component " + s.component + ": " + e.what());
    }
    write_rates_row(rates, s.scenario_id, s.component, f);
    auto [it, fresh] = decay.try_emplace(s.scenario_id);
    if (fresh) {
      decay_order.push_back(s.scenario_id);
      it->second << meta_line({{"scenario_id", s.scenario_id},
                               {"seed", s.meta["seed"]},
                               {"rng_id", s.meta["rng_id"]},
                               {"artifact_version", s.meta["artifact_version"]}});
      write_decay_header(it->second);
    }
    write_decay_rows(it->second, s.component, normalize_decay(s.points));
  }
  fs::create_directories(out_dir);
  write_file(fs::path(out_dir) / "rates.csv", rates.str());
  for (const auto& id : decay_order) write_file(fs::path(out_dir) / ("decay_" + id + ".csv"), decay[id].str());
  return 0;
}

// ---------------------------------------------------------------------------
// report

std::string short_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.5g", v);
  return buf;
}

int cmd_report(const std::string& run_dir) {
  const fs::path dir(run_dir);
  const fs::path results_path = dir / "results.csv", rates_path = dir / "rates.csv";
  if (!fs::exists(results_path)) throw Error(run_dir + ": results.csv not found (run simulate first)");
  if (!fs::exists(rates_path)) throw Error(run_dir + ": rates.csv not found (run rates first)");
  const CsvTable res = read_csv_file(results_path.string());
  const CsvTable rates = read_csv_file(rates_path.string());
  const int c_id = res.require("scenario_id"), c_model = res.require("model"), c_family = res.require("family"),
            c_tau = res.require("tau"), c_delta = res.require("delta"), c_weight = res.require("weight"),
            c_step = res.require("step"), c_n = res.require("n"), c_comp = res.require("component"),
            c_var = res.require("variance"), c_reps = res.require("reps");

  // One table per (model, family, weight, step[, tau for IVQR]); columns are
  // tau (location) or delta (IVQR). A scenario whose column is already taken
  // in every matching table opens a new one.
  struct Table {
    std::string key;
    std::string title;
    std::string column_name;
    std::vector<std::string> columns;
    std::vector<long> ns;
    std::map<std::pair<long, std::string>, std::string> cells;
    std::map<std::string, std::string> scenario_of;
  };
  std::vector<Table> tables;
  std::map<std::string, std::size_t> scenario_table;
  for (const auto& row : res.rows) {
    const bool ivqr = row[c_model] == "ivqr";
    if (ivqr && row[c_comp] != "beta") continue;
    const std::string col = ivqr ? row[c_delta] : row[c_tau];
    const std::string key = row[c_model] + "|" + row[c_family] + "|" + row[c_weight] + "|" + row[c_step] +
                            (ivqr ? "|" + row[c_tau] : "");
    std::size_t ti;
    const auto known = scenario_table.find(row[c_id]);
    if (known != scenario_table.end()) {
      ti = known->second;
    } else {
      ti = tables.size();
      for (std::size_t k = 0; k < tables.size(); ++k)
        if (tables[k].key == key && !tables[k].scenario_of.count(col)) {
          ti = k;
          break;
        }
      if (ti == tables.size()) {
        Table t;
        t.key = key;
        t.title = ivqr ? "IVQR, tau = " + row[c_tau] + ", beta" : "Location " + row[c_family];
        t.title += ", " + row[c_weight] + " weight, " + row[c_step];
        t.column_name = ivqr ? "delta" : "tau";
        tables.push_back(std::move(t));
      }
      scenario_table[row[c_id]] = ti;
    }
    Table& t = tables[ti];
    if (!t.scenario_of.count(col)) {
      t.scenario_of[col] = row[c_id];
      t.columns.push_back(col);
    }
    const long n = parse_long(row[c_n], "results.csv: n");
    if (std::find(t.ns.begin(), t.ns.end(), n) == t.ns.end()) t.ns.push_back(n);
    t.cells[{n, col}] = short_num(parse_double(row[c_var], "results.csv: variance"));
    (void)c_reps;
  }
  if (tables.empty()) throw Error(run_dir + ": results.csv has no rows");

  std::ostringstream md;
  md << "# Monte Carlo variance report\n\n";
  md << "Cells are Monte Carlo variances of the estimator. Source: `results.csv`, `rates.csv`.\n\n";
  for (auto& t : tables) {
    std::sort(t.ns.begin(), t.ns.end());
    std::vector<std::string> cols = t.columns;
    std::sort(cols.begin(), cols.end(), [](const std::string& a, const std::string& b) {
      return std::stod(a) < std::stod(b);
    });
    md << "## " << t.title << "\n\n| n |";
    for (const auto& c : cols) md << " " << t.column_name << " = " << c << " |";
    md << "\n|---:|";
    for (std::size_t k = 0; k < cols.size(); ++k) md << "---:|";
    md << "\n";
    for (long n : t.ns) {
      md << "| " << n << " |";
      for (const auto& c : cols) {
        const auto it = t.cells.find({n, c});
        md << " " << (it == t.cells.end() ? "" : it->second) << " |";
      }
      md << "\n";
    }
    md << "\n";
  }

  const int r_id = rates.require("scenario_id"), r_comp = rates.require("component"),
            r_slope = rates.require("slope"), r_se = rates.require("slope_se"),
            r_end = rates.require("endpoint_slope"), r_r2 = rates.require("r_squared"),
            r_class = rates.require("classification");
  md << "## Variance decay rates\n\n";
  md << "Slope of log variance on log n. ROOT_N: slope within max(2 se, " << short_num(kRateBandFloor)
     << ") of -1; CUBE_ROOT: same band around -2/3.\n\n";
  md << "| scenario | component | slope | se | endpoint slope | R^2 | class |\n";
  md << "|---|---|---:|---:|---:|---:|---|\n";
  for (const auto& row : rates.rows)
    md << "| " << row[r_id] << " | " << row[r_comp] << " | "
       << short_num(parse_double(row[r_slope], "rates.csv: slope")) << " | "
       << short_num(parse_double(row[r_se], "rates.csv: slope_se")) << " | "
       << short_num(parse_double(row[r_end], "rates.csv: endpoint_slope")) << " | "
       << short_num(parse_double(row[r_r2], "rates.csv: r_squared")) << " | " << row[r_class] << " |\n";

  write_file(dir / "report.md", md.str());
  std::cout << (dir / "report.md").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// dump

struct DumpArgs {
  std::string dgp;
  long n = 0;
  std::uint64_t seed = 1;
  std::string scenario_id = "dump";
  std::uint64_t rep = 0;
  double delta = 0.0;
  std::string epsilon_scale = "scaled";
  std::string out;
};

int cmd_dump(const DumpArgs& a) {
  if (a.n < 1) throw Error("--n must be at least 1");
  const SeedSpec seed{a.seed, a.scenario_id, a.rep};
  Dataset data;
  if (a.dgp == "ivqr") {
    data = gen_ivqr(a.n, a.delta, seed);
  } else {
    const Family f = parse_family(a.dgp);
    JointEpsilonScale scale = JointEpsilonScale::Scaled;
    if (a.epsilon_scale == "unit") scale = JointEpsilonScale::Unit;
    else if (a.epsilon_scale != "scaled") throw Error("--epsilon-scale must be 'scaled' or 'unit'");
    data = gen_location(a.n, f, seed, scale);
  }
  std::ostringstream csv;
  write_dataset_csv(csv, data);
  if (a.out.empty()) std::cout << csv.str();
  else write_file(a.out, csv.str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Exact GMM estimation with nonsmooth moments and Monte Carlo rate experiments"};
  app.set_version_flag("--version", std::string(kArtifactVersion));
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "run the scenarios of a JSON config");
  c_sim->add_option("--config", sim.config, "JSON run configuration")->required();
  c_sim->add_option("--out", sim.out, "output directory");
  c_sim->add_option("--threads", sim.threads, "worker threads (default: config, else all cores)");
  c_sim->add_option("--seed", sim.seed, "override every scenario's base seed");
  c_sim->add_option("--reps", sim.reps, "override every scenario's replication count");
  c_sim->add_flag("--quiet", sim.quiet, "no progress on stderr");

  SolveArgs solve;
  auto* c_solve = app.add_subcommand("solve", "exact GMM fit of one CSV dataset, printed as JSON");
  c_solve->add_option("model", solve.model, "location | ivqr")->required()->check(CLI::IsMember({"location", "ivqr"}));
  c_solve->add_option("--data", solve.data, "dataset CSV")->required();
  c_solve->add_option("--tau", solve.tau, "quantile level")->required();
  c_solve->add_option("--delta", solve.delta, "DGP endogeneity, echoed in the output");
  c_solve->add_option("--family", solve.family, "location family g1..g4")->capture_default_str();
  c_solve->add_option("--weight", solve.weight, "identity | instrument | tau-scaled | two-step")
      ->capture_default_str()
      ->check(CLI::IsMember({"identity", "instrument", "tau-scaled", "two-step"}));
  c_solve->add_option("--box", solve.box, "parameter box LO HI")->expected(2)->capture_default_str();

  PseudoArgs pt;
  auto* c_pt = app.add_subcommand("pseudo-true", "population criterion minimizer, printed as JSON");
  c_pt->add_option("--model", pt.model, "location | ivqr")->required()->check(CLI::IsMember({"location", "ivqr"}));
  c_pt->add_option("--tau", pt.tau, "quantile level")->required();
  c_pt->add_option("--delta", pt.delta, "IVQR endogeneity")->capture_default_str();
  c_pt->add_option("--family", pt.family, "location family g1..g4")->capture_default_str();
  c_pt->add_option("--weight", pt.weight, "identity | instrument | tau-scaled | two-step")
      ->capture_default_str()
      ->check(CLI::IsMember({"identity", "instrument", "tau-scaled", "two-step"}));
  c_pt->add_option("--epsilon-scale", pt.epsilon_scale, "g3/g4 epsilon scale: scaled | unit")->capture_default_str();
  c_pt->add_option("--box", pt.box, "parameter box LO HI")->expected(2)->capture_default_str();

  std::string rates_in, rates_out;
  auto* c_rates = app.add_subcommand("rates", "log-log variance slopes and decay curves from results.csv");
  c_rates->add_option("--in", rates_in, "results.csv")->required();
  c_rates->add_option("--out", rates_out, "output directory")->required();

  std::string report_dir;
  auto* c_report = app.add_subcommand("report", "Markdown variance tables and rate summary");
  c_report->add_option("--run", report_dir, "run directory with results.csv and rates.csv")->required();

  DumpArgs dump;
  auto* c_dump = app.add_subcommand("dump", "write a simulated dataset as CSV");
  c_dump->add_option("--dgp", dump.dgp, "g1 | g2 | g3 | g4 | ivqr")
      ->required()
      ->check(CLI::IsMember({"g1", "g2", "g3", "g4", "ivqr"}));
  c_dump->add_option("--n", dump.n, "observations")->required();
  c_dump->add_option("--seed", dump.seed, "base seed")->required();
  c_dump->add_option("--scenario-id", dump.scenario_id, "seed stream label")->capture_default_str();
  c_dump->add_option("--rep", dump.rep, "replication index")->capture_default_str();
  c_dump->add_option("--delta", dump.delta, "IVQR endogeneity")->capture_default_str();
  c_dump->add_option("--epsilon-scale", dump.epsilon_scale, "g3/g4 epsilon scale: scaled | unit")
      ->capture_default_str();
  c_dump->add_option("--out", dump.out, "output file (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*c_sim) return cmd_simulate(sim);
    if (*c_solve) return cmd_solve(solve);
    if (*c_pt) return cmd_pseudo_true(pt);
    if (*c_rates) return cmd_rates(rates_in, rates_out);
    if (*c_report) return cmd_report(report_dir);
    if (*c_dump) return cmd_dump(dump);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

#pragma once

#include <cctype>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "nsgmm/mc.hpp"
#include "nsgmm/sampling.hpp"
#include "nsgmm/types.hpp"

namespace nsgmm {

/// A parsed `simulate` configuration.
struct RunConfig {
  std::vector<Scenario> scenarios;
  std::string output_dir;  // may be empty; the CLI --out flag wins
  int parallelism = 0;     // 0 = all available cores
  std::string rng_id = kRngId;
  std::uint64_t base_seed = 1;
  std::string note;
};

/// Error with a 1-based line in the configuration text.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& source, long line, const std::string& msg)
      : Error(source + ":" + std::to_string(line) + ": " + msg), line_(line) {}
  long line() const { return line_; }

 private:
  long line_;
};

namespace detail {

/// Maps JSON pointers ("/scenarios/2/tau") to the line where the value
/// starts. Only meant for text that already parsed as JSON.
class JsonLineIndex {
 public:
  explicit JsonLineIndex(const std::string& text) : s_(text) {
    skip_ws();
    value("");
  }
  long line_of(const std::string& pointer) const {
    auto p = pointer;
    while (true) {
      const auto it = lines_.find(p);
      if (it != lines_.end()) return it->second;
      const auto cut = p.rfind('/');
      if (cut == std::string::npos) return 1;
      p = p.substr(0, cut);
    }
  }

 private:
  void skip_ws() {
    while (i_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[i_]))) {
      if (s_[i_] == '\n') ++line_;
      ++i_;
    }
  }
  std::string string() {
    std::string out;
    ++i_;  // opening quote
    while (i_ < s_.size() && s_[i_] != '"') {
      if (s_[i_] == '\\') out += s_[i_++];
      if (i_ < s_.size()) out += s_[i_++];
    }
    ++i_;
    return out;
  }
  void value(const std::string& ptr) {
    lines_[ptr] = line_;
    if (i_ >= s_.size()) return;
    const char c = s_[i_];
    if (c == '{') {
      ++i_;
      skip_ws();
      while (i_ < s_.size() && s_[i_] != '}') {
        const long key_line = line_;
        const std::string key = string();
        skip_ws();
        ++i_;  // colon
        skip_ws();
        const std::string child = ptr + "/" + key;
        value(child);
        lines_[child] = key_line;
        skip_ws();
        if (i_ < s_.size() && s_[i_] == ',') ++i_;
        skip_ws();
      }
      ++i_;
    } else if (c == '[') {
      ++i_;
      skip_ws();
      for (int k = 0; i_ < s_.size() && s_[i_] != ']'; ++k) {
        value(ptr + "/" + std::to_string(k));
        skip_ws();
        if (i_ < s_.size() && s_[i_] == ',') ++i_;
        skip_ws();
      }
      ++i_;
    } else if (c == '"') {
      string();
    } else {
      while (i_ < s_.size() && s_[i_] != ',' && s_[i_] != '}' && s_[i_] != ']' &&
             !std::isspace(static_cast<unsigned char>(s_[i_])))
        ++i_;
    }
  }

  const std::string& s_;
  std::size_t i_ = 0;
  long line_ = 1;
  std::map<std::string, long> lines_;
};

}  // namespace detail

/// Parses a RunConfig. Every failure is a ConfigError naming the line.
///
/// Top level: scenarios (required), base_seed, parallelism, output_dir,
/// rng_id, note. Scenario: id, model, tau, weight, n, reps (required);
/// family (location), delta (ivqr), epsilon_scale (g3/g4), step, seed, box,
/// ridge_epsilon.
inline RunConfig parse_run_config(const std::string& text, const std::string& source = "config") {
  using nlohmann::json;
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    long line = 1;
    for (std::size_t k = 0; k < e.byte && k < text.size(); ++k)
      if (text[k] == '\n') ++line;
    std::string msg = e.what();
    const auto colon = msg.find("]: ");
    throw ConfigError(source, line, colon == std::string::npos ? msg : msg.substr(colon + 3));
  }
  const detail::JsonLineIndex index(text);
  auto fail = [&](const std::string& ptr, const std::string& msg) -> ConfigError {
    return ConfigError(source, index.line_of(ptr), msg);
  };
  auto check_keys = [&](const json& obj, const std::string& ptr, const std::set<std::string>& allowed) {
    if (!obj.is_object()) throw fail(ptr, (ptr.empty() ? std::string("document") : ptr) + " must be an object");
    for (const auto& [k, v] : obj.items())
      if (!allowed.count(k)) throw fail(ptr + "/" + k, "unknown key '" + k + "'");
  };
  auto get_string = [&](const json& obj, const std::string& ptr, const std::string& key) -> std::string {
    const auto& v = obj.at(key);
    if (!v.is_string()) throw fail(ptr + "/" + key, "'" + key + "' must be a string");
    return v.get<std::string>();
  };
  auto get_number = [&](const json& obj, const std::string& ptr, const std::string& key) -> double {
    const auto& v = obj.at(key);
    if (!v.is_number()) throw fail(ptr + "/" + key, "'" + key + "' must be a number");
    return v.get<double>();
  };
  auto get_count = [&](const json& obj, const std::string& ptr, const std::string& key) -> std::uint64_t {
    const auto& v = obj.at(key);
    if (!v.is_number_unsigned()) throw fail(ptr + "/" + key, "'" + key + "' must be a non-negative integer");
    return v.get<std::uint64_t>();
  };
  auto require = [&](const json& obj, const std::string& ptr, const std::string& key) {
    if (!obj.contains(key)) throw fail(ptr, "missing required key '" + key + "'");
  };

  RunConfig cfg;
  check_keys(doc, "", {"scenarios", "base_seed", "parallelism", "output_dir", "rng_id", "note"});
  if (doc.contains("base_seed")) cfg.base_seed = get_count(doc, "", "base_seed");
  if (doc.contains("parallelism")) cfg.parallelism = static_cast<int>(get_count(doc, "", "parallelism"));
  if (doc.contains("output_dir")) cfg.output_dir = get_string(doc, "", "output_dir");
  if (doc.contains("note")) cfg.note = get_string(doc, "", "note");
  if (doc.contains("rng_id")) {
    cfg.rng_id = get_string(doc, "", "rng_id");
    if (cfg.rng_id != kRngId)
      throw fail("/rng_id", "rng_id '" + cfg.rng_id + "' is not available; this build provides '" + kRngId + "'");
  }
  require(doc, "", "scenarios");
  const auto& list = doc.at("scenarios");
  if (!list.is_array() || list.empty()) throw fail("/scenarios", "'scenarios' must be a non-empty array");

  std::set<std::string> ids;
  for (std::size_t k = 0; k < list.size(); ++k) {
    const std::string ptr = "/scenarios/" + std::to_string(k);
    const json& o = list[k];
    check_keys(o, ptr,
               {"id", "model", "family", "tau", "delta", "epsilon_scale", "weight", "step", "n", "reps", "seed", "box",
                "ridge_epsilon"});
    for (const char* key : {"id", "model", "tau", "weight", "n", "reps"}) require(o, ptr, key);
    Scenario s;
    s.scenario_id = get_string(o, ptr, "id");
    if (!ids.insert(s.scenario_id).second) throw fail(ptr + "/id", "duplicate scenario id '" + s.scenario_id + "'");
    const std::string model = get_string(o, ptr, "model");
    const double tau = get_number(o, ptr, "tau");
    try {
      if (model == "location") {
        require(o, ptr, "family");
        if (o.contains("delta")) throw fail(ptr + "/delta", "'delta' applies to the ivqr model only");
        Family f;
        try {
          f = parse_family(get_string(o, ptr, "family"));
        } catch (const ConfigError&) {
          throw;
        } catch (const Error& e) {
          throw fail(ptr + "/family", e.what());
        }
        if (f == Family::Ivqr) throw fail(ptr + "/family", "location family must be g1..g4");
        s.spec = MomentSpec::location(static_cast<int>(f) + 1, tau);
        if (o.contains("epsilon_scale")) {
          const std::string sc = get_string(o, ptr, "epsilon_scale");
          if (sc == "scaled") s.scale = JointEpsilonScale::Scaled;
          else if (sc == "unit") s.scale = JointEpsilonScale::Unit;
          else throw fail(ptr + "/epsilon_scale", "epsilon_scale must be 'scaled' or 'unit'");
        }
      } else if (model == "ivqr") {
        if (o.contains("family")) throw fail(ptr + "/family", "'family' applies to the location model only");
        if (o.contains("epsilon_scale"))
          throw fail(ptr + "/epsilon_scale", "'epsilon_scale' applies to the location model only");
        s.spec = MomentSpec::ivqr(tau);
        if (o.contains("delta")) {
          s.delta = get_number(o, ptr, "delta");
          try {
            check_ivqr_delta(s.delta);
          } catch (const Error& e) {
            throw fail(ptr + "/delta", e.what());
          }
        }
      } else {
        throw fail(ptr + "/model", "model must be 'location' or 'ivqr'");
      }
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw fail(ptr + "/tau", e.what());
    }
    const std::string weight = get_string(o, ptr, "weight");
    try {
      s.weight.kind = parse_weight(weight);
    } catch (const Error& e) {
      throw fail(ptr + "/weight", e.what());
    }
    if (o.contains("ridge_epsilon")) s.weight.ridge_epsilon = get_number(o, ptr, "ridge_epsilon");
    if (o.contains("step")) {
      const std::string step = get_string(o, ptr, "step");
      if (step == "two-step") s.two_step = true;
      else if (step != "one-step") throw fail(ptr + "/step", "step must be 'one-step' or 'two-step'");
    }
    const auto& ns = o.at("n");
    if (!ns.is_array()) throw fail(ptr + "/n", "'n' must be an array of sample sizes");
    for (std::size_t j = 0; j < ns.size(); ++j) {
      if (!ns[j].is_number_unsigned())
        throw fail(ptr + "/n/" + std::to_string(j), "sample sizes must be positive integers");
      s.n_grid.push_back(ns[j].get<long>());
      if (s.n_grid.back() < 1) throw fail(ptr + "/n/" + std::to_string(j), "sample sizes must be positive integers");
      if (j > 0 && s.n_grid[j] <= s.n_grid[j - 1])
        throw fail(ptr + "/n/" + std::to_string(j), "n must be strictly increasing");
    }
    s.reps = static_cast<long>(get_count(o, ptr, "reps"));
    if (s.reps < 2) throw fail(ptr + "/reps", "reps must be at least 2");
    s.base_seed = o.contains("seed") ? get_count(o, ptr, "seed") : cfg.base_seed;
    if (o.contains("box")) {
      const auto& b = o.at("box");
      if (!b.is_array() || b.size() != 2 || !b[0].is_number() || !b[1].is_number())
        throw fail(ptr + "/box", "'box' must be [lo, hi]");
      s.box = {b[0].get<double>(), b[1].get<double>()};
      try {
        s.box.validate();
      } catch (const Error& e) {
        throw fail(ptr + "/box", e.what());
      }
    }
    try {
      s.validate();
    } catch (const Error& e) {
      throw fail(ptr, std::string("scenario '") + s.scenario_id + "': " + e.what());
    }
    cfg.scenarios.push_back(std::move(s));
  }
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path);
}

}  // namespace nsgmm

#include "hmix/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "hmix/error.hpp"

namespace hmix {

std::vector<ExpertSpec> RunConfig::effective_roster() const {
  if (!roster.empty()) return roster;
  return default_roster(season, window, seed);
}

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json roster = nlohmann::json::array();
  for (const auto& s : c.roster) roster.push_back(to_json(s));
  return {{"hierarchy", c.hierarchy_path},
          {"panel", c.panel_path},
          {"output_dir", c.output_dir},
          {"window", c.window},
          {"season", c.season},
          {"roster", roster},
          {"gating", to_json(c.gating)},
          {"quantile", to_json(c.quantile)},
          {"train_quantiles", c.train_quantiles},
          {"refit_experts", c.refit_experts},
          {"reconciliation", to_string(c.reconciliation)},
          {"shrinkage_alpha", c.shrinkage_alpha},
          {"estimate_shrinkage", c.estimate_shrinkage},
          {"online", to_json(c.online)},
          {"simulate",
           {{"kind", c.simulate.kind},
            {"length", c.simulate.length},
            {"season", c.simulate.season},
            {"noise_sd", c.simulate.noise_sd}}},
          {"horizon", c.horizon},
          {"lambda_sweep", c.lambda_sweep},
          {"seed", c.seed},
          {"jobs", c.jobs}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  static const std::set<std::string> known{
      "hierarchy", "panel",          "output_dir",     "window",          "season",     "roster",
      "gating",    "quantile",       "train_quantiles", "refit_experts",  "reconciliation", "shrinkage_alpha",
      "estimate_shrinkage", "online", "simulate",       "horizon",         "lambda_sweep", "seed",
      "jobs"};
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw ConfigError("unknown config key '" + k + "'");
  }
  RunConfig c;
  try {
    c.hierarchy_path = j.value("hierarchy", c.hierarchy_path);
    c.panel_path = j.value("panel", c.panel_path);
    c.output_dir = j.value("output_dir", c.output_dir);
    c.window = j.value("window", c.window);
    c.season = j.value("season", c.season);
    if (j.contains("roster")) {
      for (const auto& s : j.at("roster")) c.roster.push_back(expert_spec_from_json(s));
    }
    c.gating.window = c.window;
    c.quantile.window = c.window;
    if (j.contains("gating")) {
      c.gating = gating_config_from_json(j.at("gating"));
      if (!j.at("gating").contains("window")) c.gating.window = c.window;
    }
    if (j.contains("quantile")) {
      c.quantile = quantile_config_from_json(j.at("quantile"));
      if (!j.at("quantile").contains("window")) c.quantile.window = c.window;
    }
    c.train_quantiles = j.value("train_quantiles", c.train_quantiles);
    c.refit_experts = j.value("refit_experts", c.refit_experts);
    c.reconciliation = reconcile_method_from_string(j.value("reconciliation", std::string(to_string(c.reconciliation))));
    c.shrinkage_alpha = j.value("shrinkage_alpha", c.shrinkage_alpha);
    c.estimate_shrinkage = j.value("estimate_shrinkage", c.estimate_shrinkage);
    if (j.contains("online")) c.online = online_config_from_json(j.at("online"));
    if (j.contains("simulate")) {
      const auto& s = j.at("simulate");
      c.simulate.kind = s.value("kind", c.simulate.kind);
      c.simulate.length = s.value("length", c.simulate.length);
      c.simulate.season = s.value("season", c.simulate.season);
      c.simulate.noise_sd = s.value("noise_sd", c.simulate.noise_sd);
    }
    c.horizon = j.value("horizon", c.horizon);
    c.lambda_sweep = j.value("lambda_sweep", c.lambda_sweep);
    c.seed = j.value("seed", c.seed);
    c.jobs = j.value("jobs", c.jobs);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed run config: ") + e.what());
  }
  if (c.window == 0) throw ConfigError("window must be positive");
  if (c.simulate.kind != "hierarchical" && c.simulate.kind != "piecewise") {
    throw ConfigError("simulate.kind must be hierarchical or piecewise");
  }
  if (!(c.shrinkage_alpha > 0.0 && c.shrinkage_alpha <= 1.0)) throw ConfigError("shrinkage_alpha must lie in (0, 1]");
  for (double l : c.lambda_sweep)
    if (l < 0.0) throw ConfigError("lambda sweep values must be non-negative");
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

std::string config_hash(const RunConfig& cfg) {
  const std::string text = to_json(cfg).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace hmix

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "hmix/changepoint.hpp"
#include "hmix/experts.hpp"
#include "hmix/gating.hpp"
#include "hmix/quantile.hpp"
#include "hmix/reconcile.hpp"

namespace hmix {

struct SimulateConfig {
  std::string kind = "hierarchical";  // or "piecewise"
  std::size_t length = 500;
  std::size_t season = 12;
  double noise_sd = 0.22360679774997896;  // sqrt(0.05)
};

/// Every setting of a run; defaults mirror the reference hyperparameters.
struct RunConfig {
  std::string hierarchy_path;
  std::string panel_path;
  std::string output_dir = "out";
  std::size_t window = 16;
  std::size_t season = 12;
  std::vector<ExpertSpec> roster;  // empty means the default roster
  GatingConfig gating;
  QuantileConfig quantile;
  bool train_quantiles = true;
  bool refit_experts = true;
  ReconcileMethod reconciliation = ReconcileMethod::mint_shr;
  double shrinkage_alpha = 0.1;
  bool estimate_shrinkage = false;
  OnlineConfig online;
  SimulateConfig simulate;
  std::size_t horizon = 0;  // 0 means the full test split
  std::vector<double> lambda_sweep{0.0, 0.01, 0.1, 0.5, 1.0, 10.0};
  std::uint64_t seed = 0;
  std::size_t jobs = 1;

  /// Roster with the window and season applied when none was configured.
  std::vector<ExpertSpec> effective_roster() const;
};

nlohmann::json to_json(const RunConfig& cfg);
/// Missing keys keep their defaults; unknown top-level keys are rejected.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

/// FNV-1a of the canonical JSON dump, as 16 hex digits.
std::string config_hash(const RunConfig& cfg);

}  // namespace hmix

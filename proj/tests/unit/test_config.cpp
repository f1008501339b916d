#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "hmix/config.hpp"
#include "hmix/error.hpp"

using namespace hmix;

TEST_CASE("defaults follow the reference hyperparameters") {
  const RunConfig c;
  CHECK(c.gating.lambda == 0.1);
  CHECK(c.gating.learning_rate == 1e-4);
  CHECK(c.gating.epochs == 1200);
  CHECK(c.gating.batch_size == 16);
  CHECK(c.quantile.degree == 16);
  CHECK(c.quantile.taus == std::vector<double>{0.05, 0.3, 0.5, 0.7, 0.95});
  CHECK(c.quantile.epochs == 600);
  CHECK(c.online.bocpd.hazard == 1e-3);
  CHECK(c.online.bocpd.mu0 == 0.0);
  CHECK(c.online.bocpd.var0 == 2.0);
  CHECK(c.online.bocpd.obs_var == 1.0);
  CHECK(c.online.gamma == 2.0);
  CHECK(c.online.update_epochs == 5);
  CHECK(c.effective_roster().size() == 5);
}

TEST_CASE("round trip") {
  RunConfig c;
  c.window = 12;
  c.gating.lambda = 0.5;
  c.gating.level_lambda[2] = 0.0;
  c.quantile.constraint = ConstraintKind::mean;
  c.reconciliation = ReconcileMethod::erm;
  c.online.mitigation = false;
  c.simulate.kind = "piecewise";
  c.roster = default_roster(4, 12, 9);
  c.seed = 99;
  const auto j = to_json(c);
  const auto back = run_config_from_json(j);
  CHECK(to_json(back) == j);
  CHECK(config_hash(back) == config_hash(c));
  c.seed = 100;
  CHECK(config_hash(back) != config_hash(c));
  CHECK(config_hash(c).size() == 16);
}

TEST_CASE("window propagates unless overridden") {
  const auto c = run_config_from_json(nlohmann::json{{"window", 8}, {"quantile", {{"window", 4}}}});
  CHECK(c.gating.window == 8);
  CHECK(c.quantile.window == 4);
}

TEST_CASE("invalid documents") {
  CHECK_THROWS_AS(run_config_from_json(nlohmann::json{{"windwo", 3}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(nlohmann::json::array()), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(nlohmann::json{{"window", "wide"}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(nlohmann::json{{"reconciliation", "magic"}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(nlohmann::json{{"lambda_sweep", {0.1, -1}}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(nlohmann::json{{"gating", {{"lambda", -0.1}}}}), ConfigError);
  CHECK_THROWS_AS(load_run_config("/nonexistent/cfg.json"), ConfigError);
  const auto path = std::filesystem::temp_directory_path() / "hmix_bad_config.json";
  std::ofstream(path) << "{ not json";
  CHECK_THROWS_AS(load_run_config(path), ConfigError);
  std::filesystem::remove(path);
}

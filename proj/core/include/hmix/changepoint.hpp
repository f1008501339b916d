#pragma once

#include <cstddef>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "hmix/gating.hpp"
#include "hmix/quantile.hpp"

namespace hmix {

/// Normal density with mean mu and variance var_l + obs_var.
double upm_predictive(double x, double mu, double var_l, double obs_var);
double upm_log_predictive(double x, double mu, double var_l, double obs_var);

/// Conjugate update of the unknown mean after one observation.
std::pair<double, double> posterior_update(double mu, double var_l, double x, double obs_var);

enum class DetectionRule {
  map_drop,   // MAP run length falls below its previous value
  map_is_one  // MAP run length equals 1
};

const char* to_string(DetectionRule r);
DetectionRule detection_rule_from_string(const std::string& name);

struct BocpdConfig {
  double hazard = 1e-3;
  double mu0 = 0.0;
  double var0 = 2.0;
  double obs_var = 1.0;
  std::size_t warmup = 20;
  std::size_t max_run = 500;
  bool log_space = false;
  DetectionRule rule = DetectionRule::map_drop;
};

nlohmann::json to_json(const BocpdConfig& cfg);
BocpdConfig bocpd_config_from_json(const nlohmann::json& j);

struct BocpdStep {
  std::size_t t = 0;
  std::size_t map_run_length = 0;
  bool detected = false;
  /// True when this step had to be recomputed in log space.
  bool log_fallback = false;
};

/// Run-length posterior for a Gaussian stream with unknown mean.
class Bocpd {
 public:
  explicit Bocpd(BocpdConfig cfg = {});

  BocpdStep step(double x);

  const BocpdConfig& config() const { return cfg_; }
  std::size_t time() const { return t_; }
  /// P(r_t = l | x_1..t) for l = 0..size-1.
  std::vector<double> posterior() const;
  /// Posterior mean and variance of the mean parameter per run length.
  const std::vector<double>& means() const { return mu_; }
  const std::vector<double>& variances() const { return var_; }

 private:
  BocpdConfig cfg_;
  std::size_t t_ = 0;
  std::size_t prev_map_ = 0;
  std::vector<double> mass_;  // linear posterior, or log posterior in log-space mode
  std::vector<double> mu_;
  std::vector<double> var_;

  bool step_linear(double x);
  void step_log(double x, bool from_linear);
};

/// Steps since the last detected change, with N = infinity meaning inactive.
struct ShrinkageState {
  double beta0 = 1.0;
  double gamma = 2.0;
  double threshold = 0.1;
  double steps = std::numeric_limits<double>::infinity();

  bool active() const { return std::isfinite(steps); }
  /// beta0 * exp(-N / gamma), zero when inactive.
  double blend() const;
  void trigger() { steps = 0.0; }
  /// Counts one step; deactivates once exp(-N / gamma) drops below the threshold.
  void advance();
};

/// (1 - b) g + b / L with b = shrink.blend().
std::vector<double> shrink_weights(std::span<const double> g_opt, const ShrinkageState& shrink);

struct OnlineConfig {
  BocpdConfig bocpd;
  double beta0 = 1.0;
  double gamma = 2.0;
  bool mitigation = true;
  std::size_t update_epochs = 5;
  double learning_rate = 1e-4;
  bool update_experts = false;
  std::vector<double> taus;  // quantiles recorded per step when a generator is given
};

nlohmann::json to_json(const OnlineConfig& cfg);
OnlineConfig online_config_from_json(const nlohmann::json& j);

struct OnlineRecord {
  std::size_t t = 0;
  double y = 0.0;
  double yhat = 0.0;
  double residual = 0.0;
  std::size_t map_run_length = 0;
  bool detected = false;
  std::vector<double> weights;
  std::vector<double> quantiles;
};

/// Predicts stream[t] for t = start..end-1 from stream[0, t), then learns from
/// it. The forecaster's gate is updated in place.
std::vector<OnlineRecord> online_loop(MixtureForecaster& forecaster, const QuantileGenerator* quantiles,
                                      std::span<const double> stream, std::size_t start, const OnlineConfig& cfg);

}  // namespace hmix

#include "hmix/changepoint.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <nlohmann/json.hpp>

#include "hmix/error.hpp"

namespace hmix {

double upm_log_predictive(double x, double mu, double var_l, double obs_var) {
  if (!(var_l > 0.0) || !(obs_var > 0.0)) throw ConfigError("predictive variances must be positive");
  const double v = var_l + obs_var;
  const double d = x - mu;
  return -0.5 * std::log(2.0 * std::numbers::pi * v) - 0.5 * d * d / v;
}

double upm_predictive(double x, double mu, double var_l, double obs_var) {
  return std::exp(upm_log_predictive(x, mu, var_l, obs_var));
}

std::pair<double, double> posterior_update(double mu, double var_l, double x, double obs_var) {
  if (!(var_l > 0.0) || !(obs_var > 0.0)) throw ConfigError("posterior variances must be positive");
  const double var = 1.0 / (1.0 / var_l + 1.0 / obs_var);
  return {var * (mu / var_l + x / obs_var), var};
}

const char* to_string(DetectionRule r) { return r == DetectionRule::map_drop ? "map_drop" : "map_is_one"; }

DetectionRule detection_rule_from_string(const std::string& name) {
  if (name == "map_drop") return DetectionRule::map_drop;
  if (name == "map_is_one") return DetectionRule::map_is_one;
  throw ConfigError("unknown detection rule '" + name + "'");
}

nlohmann::json to_json(const BocpdConfig& c) {
  return {{"hazard", c.hazard},   {"mu0", c.mu0},           {"var0", c.var0},
          {"obs_var", c.obs_var}, {"warmup", c.warmup},     {"max_run", c.max_run},
          {"log_space", c.log_space}, {"rule", to_string(c.rule)}};
}

BocpdConfig bocpd_config_from_json(const nlohmann::json& j) {
  BocpdConfig c;
  try {
    c.hazard = j.value("hazard", c.hazard);
    c.mu0 = j.value("mu0", c.mu0);
    c.var0 = j.value("var0", c.var0);
    c.obs_var = j.value("obs_var", c.obs_var);
    c.warmup = j.value("warmup", c.warmup);
    c.max_run = j.value("max_run", c.max_run);
    c.log_space = j.value("log_space", c.log_space);
    c.rule = detection_rule_from_string(j.value("rule", std::string(to_string(c.rule))));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed changepoint config: ") + e.what());
  }
  return c;
}

Bocpd::Bocpd(BocpdConfig cfg) : cfg_(cfg) {
  if (!(cfg_.hazard > 0.0 && cfg_.hazard < 1.0)) throw ConfigError("hazard must lie in (0, 1)");
  if (!(cfg_.var0 > 0.0) || !(cfg_.obs_var > 0.0)) throw ConfigError("BOCPD variances must be positive");
  if (cfg_.max_run < 1) throw ConfigError("max_run must be >= 1");
  mass_ = {cfg_.log_space ? 0.0 : 1.0};
  mu_ = {cfg_.mu0};
  var_ = {cfg_.var0};
}

std::vector<double> Bocpd::posterior() const {
  if (!cfg_.log_space) return mass_;
  std::vector<double> p(mass_.size());
  std::transform(mass_.begin(), mass_.end(), p.begin(), [](double v) { return std::exp(v); });
  return p;
}

bool Bocpd::step_linear(double x) {
  const std::size_t n = mass_.size();
  std::vector<double> next(n + 1, 0.0);
  double change = 0.0;
  for (std::size_t l = 0; l < n; ++l) {
    const double joint = mass_[l] * upm_predictive(x, mu_[l], var_[l], cfg_.obs_var);
    next[l + 1] = joint * (1.0 - cfg_.hazard);
    change += joint * cfg_.hazard;
  }
  next[0] = change;
  const double evidence = std::accumulate(next.begin(), next.end(), 0.0);
  if (!(evidence > 0.0) || !std::isfinite(evidence)) return false;
  for (double& v : next) v /= evidence;
  mass_ = std::move(next);
  return true;
}

void Bocpd::step_log(double x, bool from_linear) {
  const std::size_t n = mass_.size();
  const double log_h = std::log(cfg_.hazard);
  const double log_1mh = std::log1p(-cfg_.hazard);
  std::vector<double> next(n + 1, -std::numeric_limits<double>::infinity());
  std::vector<double> joints(n);
  for (std::size_t l = 0; l < n; ++l) {
    const double lp = from_linear ? std::log(mass_[l]) : mass_[l];
    joints[l] = lp + upm_log_predictive(x, mu_[l], var_[l], cfg_.obs_var);
    next[l + 1] = joints[l] + log_1mh;
  }
  const double jmax = *std::max_element(joints.begin(), joints.end());
  double s = 0.0;
  for (double j : joints) s += std::exp(j - jmax);
  next[0] = jmax + std::log(s) + log_h;
  const double m = *std::max_element(next.begin(), next.end());
  double z = 0.0;
  for (double v : next) z += std::exp(v - m);
  const double log_evidence = m + std::log(z);
  for (double& v : next) v -= log_evidence;
  if (from_linear) {
    for (double& v : next) v = std::exp(v);
  }
  mass_ = std::move(next);
}

BocpdStep Bocpd::step(double x) {
  if (!std::isfinite(x)) throw DataError("non-finite BOCPD observation");
  ++t_;
  BocpdStep out;
  out.t = t_;
  if (cfg_.log_space) {
    step_log(x, false);
  } else if (!step_linear(x)) {
    step_log(x, true);
    out.log_fallback = true;
  }

  // Parameters advance alongside the run lengths; index 0 restarts at the prior.
  std::vector<double> mu(mass_.size());
  std::vector<double> var(mass_.size());
  mu[0] = cfg_.mu0;
  var[0] = cfg_.var0;
  for (std::size_t l = 0; l + 1 < mass_.size(); ++l) {
    std::tie(mu[l + 1], var[l + 1]) = posterior_update(mu_[l], var_[l], x, cfg_.obs_var);
  }
  mu_ = std::move(mu);
  var_ = std::move(var);

  if (mass_.size() > cfg_.max_run + 1) {
    mass_.resize(cfg_.max_run + 1);
    mu_.resize(cfg_.max_run + 1);
    var_.resize(cfg_.max_run + 1);
    if (cfg_.log_space) {
      const double m = *std::max_element(mass_.begin(), mass_.end());
      double z = 0.0;
      for (double v : mass_) z += std::exp(v - m);
      const double lz = m + std::log(z);
      for (double& v : mass_) v -= lz;
    } else {
      const double z = std::accumulate(mass_.begin(), mass_.end(), 0.0);
      for (double& v : mass_) v /= z;
    }
  }

  out.map_run_length =
      static_cast<std::size_t>(std::distance(mass_.begin(), std::max_element(mass_.begin(), mass_.end())));
  if (t_ != 1 && t_ > cfg_.warmup) {
    out.detected = cfg_.rule == DetectionRule::map_is_one ? out.map_run_length == 1
                                                          : out.map_run_length < prev_map_;
  }
  prev_map_ = out.map_run_length;
  return out;
}

double ShrinkageState::blend() const {
  if (!active()) return 0.0;
  return beta0 * std::exp(-steps / gamma);
}

void ShrinkageState::advance() {
  if (!active()) return;
  steps += 1.0;
  if (std::exp(-steps / gamma) < threshold) steps = std::numeric_limits<double>::infinity();
}

std::vector<double> shrink_weights(std::span<const double> g_opt, const ShrinkageState& shrink) {
  if (!(shrink.beta0 >= 0.0 && shrink.beta0 <= 1.0)) throw ConfigError("beta0 must lie in [0, 1]");
  if (g_opt.empty()) throw DataError("no weights to shrink");
  std::vector<double> out(g_opt.begin(), g_opt.end());
  if (!shrink.active()) return out;
  const double b = shrink.blend();
  const double uniform = 1.0 / static_cast<double>(g_opt.size());
  for (double& v : out) v = (1.0 - b) * v + b * uniform;
  return out;
}

nlohmann::json to_json(const OnlineConfig& c) {
  return {{"bocpd", to_json(c.bocpd)},         {"beta0", c.beta0},
          {"gamma", c.gamma},                  {"mitigation", c.mitigation},
          {"update_epochs", c.update_epochs},  {"learning_rate", c.learning_rate},
          {"update_experts", c.update_experts}, {"taus", c.taus}};
}

OnlineConfig online_config_from_json(const nlohmann::json& j) {
  OnlineConfig c;
  try {
    if (j.contains("bocpd")) c.bocpd = bocpd_config_from_json(j.at("bocpd"));
    c.beta0 = j.value("beta0", c.beta0);
    c.gamma = j.value("gamma", c.gamma);
    c.mitigation = j.value("mitigation", c.mitigation);
    c.update_epochs = j.value("update_epochs", c.update_epochs);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.update_experts = j.value("update_experts", c.update_experts);
    c.taus = j.value("taus", c.taus);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed online config: ") + e.what());
  }
  if (!(c.beta0 >= 0.0 && c.beta0 <= 1.0)) throw ConfigError("beta0 must lie in [0, 1]");
  if (!(c.gamma > 0.0)) throw ConfigError("gamma must be positive");
  return c;
}

std::vector<OnlineRecord> online_loop(MixtureForecaster& forecaster, const QuantileGenerator* quantiles,
                                      std::span<const double> stream, std::size_t start, const OnlineConfig& cfg) {
  std::vector<OnlineRecord> records;
  if (start >= stream.size()) return records;
  if (start < forecaster.min_history()) throw DataError("online start leaves too little history for the mixture");
  if (quantiles && start < quantiles->window()) throw DataError("online start leaves too little history for quantiles");
  if (!(cfg.beta0 >= 0.0 && cfg.beta0 <= 1.0)) throw ConfigError("beta0 must lie in [0, 1]");

  Bocpd detector(cfg.bocpd);
  ShrinkageState shrink{cfg.beta0, cfg.gamma};
  GatingNetwork& gate = forecaster.gate;
  const bool trainable = !gate.is_constant() && cfg.update_epochs > 0;
  nn::AdamState adam;
  if (trainable) adam = nn::AdamState(gate.net(), {cfg.learning_rate, 0.9, 0.999, 1e-8});
  const nn::ZScaler scaler = gate.scaler();
  const std::size_t w = gate.window();
  const std::size_t L = forecaster.experts.size();

  std::vector<std::unique_ptr<Expert>> owned;
  if (cfg.update_experts) {
    for (const auto& e : forecaster.experts) owned.push_back(e->clone());
  }

  records.reserve(stream.size() - start);
  for (std::size_t t = start; t < stream.size(); ++t) {
    const auto history = stream.first(t);
    const auto g_opt = gate.weights(history);
    const auto g = cfg.mitigation ? shrink_weights(g_opt, shrink) : g_opt;
    const auto f = forecaster.expert_forecasts(history);
    double yhat = 0.0;
    for (std::size_t l = 0; l < L; ++l) yhat += g[l] * f[l];

    OnlineRecord rec;
    rec.t = t;
    rec.y = stream[t];
    rec.yhat = yhat;
    rec.residual = rec.y - yhat;
    if (quantiles && !cfg.taus.empty()) {
      rec.quantiles = quantiles->quantiles(history.last(quantiles->window()), yhat, cfg.taus);
    }
    const auto bs = detector.step(rec.residual);
    rec.map_run_length = bs.map_run_length;
    rec.detected = bs.detected;
    rec.weights = g;
    if (cfg.mitigation) {
      if (bs.detected) {
        shrink.trigger();
      } else {
        shrink.advance();
      }
    }

    if (trainable) {
      Eigen::MatrixXd x(1, static_cast<Eigen::Index>(w));
      for (std::size_t c = 0; c < w; ++c) x(0, static_cast<Eigen::Index>(c)) = history[t - w + c];
      const Eigen::MatrixXd xs = gate.scale_windows(x);
      Eigen::RowVectorXd fs(static_cast<Eigen::Index>(L));
      for (std::size_t l = 0; l < L; ++l) fs(static_cast<Eigen::Index>(l)) = scaler.forward(f[l]);
      const double ys = scaler.forward(rec.y);
      for (std::size_t e = 0; e < cfg.update_epochs; ++e) {
        const auto cache = gate.net().forward(xs);
        const double comb = cache.output.row(0).dot(fs);
        const Eigen::MatrixXd grad = 2.0 * (comb - ys) * fs;
        const auto grads = gate.net().backward(cache, grad);
        nn::adam_step(gate.mutable_net(), grads, adam);
      }
    }
    if (cfg.update_experts) {
      for (std::size_t l = 0; l < L; ++l) {
        if (t + 1 >= owned[l]->min_fit_length()) owned[l]->fit(stream.first(t + 1));
        forecaster.experts[l] = ExpertPtr(owned[l]->clone());
      }
    }
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace hmix

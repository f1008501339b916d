#include "hmix/metrics.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "hmix/error.hpp"
#include "hmix/quantile.hpp"

namespace hmix {

double mase(std::span<const double> insample, std::span<const double> truth, std::span<const double> forecast) {
  if (insample.size() < 2) throw DataError("MASE needs at least two in-sample values");
  if (truth.size() != forecast.size() || truth.empty()) throw DataError("MASE truth and forecast differ in length");
  double denom = 0.0;
  for (std::size_t t = 1; t < insample.size(); ++t) denom += std::abs(insample[t] - insample[t - 1]);
  denom /= static_cast<double>(insample.size() - 1);
  if (!(denom > 0.0)) throw DataError("MASE scale is zero (constant in-sample series)");
  double num = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) num += std::abs(truth[i] - forecast[i]);
  return 100.0 / static_cast<double>(truth.size()) * num / denom;
}

std::vector<double> crps_grid(std::size_t points) {
  if (points == 0) throw ConfigError("CRPS grid needs at least one point");
  std::vector<double> taus(points);
  for (std::size_t i = 0; i < points; ++i) taus[i] = static_cast<double>(i + 1) / static_cast<double>(points + 1);
  return taus;
}

double crps_from_quantiles(double truth, std::span<const double> taus, std::span<const double> quantiles) {
  if (taus.size() != quantiles.size() || taus.empty()) throw DataError("CRPS grid and quantiles differ in length");
  double s = 0.0;
  for (std::size_t i = 0; i < taus.size(); ++i) {
    if (i > 0 && quantiles[i] < quantiles[i - 1]) throw DataError("quantiles decrease along the CRPS grid");
    s += pinball_loss(truth, quantiles[i], taus[i]);
  }
  return 2.0 * s / static_cast<double>(taus.size());
}

double crps_from_quantiles(double truth, const std::function<double(double)>& quantile_fn, std::size_t points) {
  const auto taus = crps_grid(points);
  std::vector<double> q(taus.size());
  for (std::size_t i = 0; i < taus.size(); ++i) q[i] = quantile_fn(taus[i]);
  return crps_from_quantiles(truth, taus, q);
}

std::pair<double, double> mean_sd(std::span<const double> values) {
  if (values.empty()) return {0.0, 0.0};
  double m = 0.0;
  for (double v : values) m += v;
  m /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - m) * (v - m);
  return {m, std::sqrt(ss / static_cast<double>(values.size()))};
}

double nrmse(std::span<const double> truth, std::span<const double> forecast) {
  if (truth.size() != forecast.size() || truth.empty()) throw DataError("NRMSE truth and forecast differ in length");
  const auto [m, sd] = mean_sd(truth);
  (void)m;
  if (!(sd > 0.0)) throw DataError("NRMSE undefined for a constant truth");
  double ss = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) ss += (truth[i] - forecast[i]) * (truth[i] - forecast[i]);
  return std::sqrt(ss / static_cast<double>(truth.size())) / sd;
}

std::vector<LevelMetrics> EvalReport::levels() const {
  std::map<std::size_t, std::vector<const VertexMetrics*>> by_level;
  for (const auto& v : vertices) by_level[v.level].push_back(&v);
  std::vector<LevelMetrics> out;
  for (const auto& [lvl, vs] : by_level) {
    LevelMetrics lm;
    lm.level = lvl;
    lm.count = vs.size();
    std::vector<double> m;
    double crps = 0.0;
    bool has_crps = true;
    for (const auto* v : vs) {
      m.push_back(v->mase);
      crps += v->crps;
      has_crps = has_crps && v->has_crps;
    }
    std::tie(lm.mase_mean, lm.mase_sd) = mean_sd(m);
    lm.has_crps = has_crps;
    lm.crps_mean = has_crps ? crps / static_cast<double>(vs.size()) : 0.0;
    out.push_back(lm);
  }
  return out;
}

double EvalReport::mean_mase() const {
  if (vertices.empty()) return 0.0;
  double s = 0.0;
  for (const auto& v : vertices) s += v.mase;
  return s / static_cast<double>(vertices.size());
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json verts = nlohmann::json::array();
  for (const auto& v : r.vertices) {
    nlohmann::json j = {{"vertex", v.vertex}, {"level", v.level}, {"mase", v.mase}, {"nrmse", v.nrmse}};
    if (v.has_crps) j["crps"] = v.crps;
    verts.push_back(j);
  }
  nlohmann::json levels = nlohmann::json::array();
  for (const auto& l : r.levels()) {
    nlohmann::json j = {{"level", l.level}, {"count", l.count}, {"mase_mean", l.mase_mean}, {"mase_sd", l.mase_sd}};
    if (l.has_crps) j["crps_mean"] = l.crps_mean;
    levels.push_back(j);
  }
  return {{"vertices", verts},
          {"levels", levels},
          {"coherent_loss", r.coherent_loss},
          {"seed", r.seed},
          {"config_hash", r.config_hash}};
}

}  // namespace hmix

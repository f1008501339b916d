#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <utility>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace hmix {

/// (100/H) sum |y - yhat| divided by the mean absolute one-step in-sample change.
/// Throws DataError for a constant in-sample series.
double mase(std::span<const double> insample, std::span<const double> truth, std::span<const double> forecast);

/// The 0.01, 0.02, ..., 0.99 grid.
std::vector<double> crps_grid(std::size_t points = 99);

/// 2 * mean over the grid of pinball(truth, q(tau), tau). `quantiles[i]` is q at
/// `taus[i]`; throws DataError if the quantiles decrease.
double crps_from_quantiles(double truth, std::span<const double> taus, std::span<const double> quantiles);
double crps_from_quantiles(double truth, const std::function<double(double)>& quantile_fn, std::size_t points = 99);

/// RMSE divided by the population standard deviation of the truth.
double nrmse(std::span<const double> truth, std::span<const double> forecast);

struct VertexMetrics {
  std::string vertex;
  std::size_t level = 0;
  double mase = 0.0;
  double crps = 0.0;
  double nrmse = 0.0;
  bool has_crps = false;
};

struct LevelMetrics {
  std::size_t level = 0;
  std::size_t count = 0;
  double mase_mean = 0.0;
  double mase_sd = 0.0;
  double crps_mean = 0.0;
  bool has_crps = false;
};

struct EvalReport {
  std::vector<VertexMetrics> vertices;
  double coherent_loss = 0.0;
  std::uint64_t seed = 0;
  std::string config_hash;

  std::vector<LevelMetrics> levels() const;
  double mean_mase() const;
};

nlohmann::json to_json(const EvalReport& r);

/// Mean and population standard deviation.
std::pair<double, double> mean_sd(std::span<const double> values);

}  // namespace hmix

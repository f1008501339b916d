#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "hmix/chebyshev.hpp"
#include "hmix/neural.hpp"

namespace hmix {

struct QuantileConfig {
  int degree = 16;
  std::size_t window = 16;
  std::vector<std::size_t> hidden{120, 120, 60, 60, 10};
  std::vector<double> taus{0.05, 0.3, 0.5, 0.7, 0.95};
  ConstraintKind constraint = ConstraintKind::median;
  double learning_rate = 1e-4;
  std::size_t epochs = 600;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  // Hinge on negative quantile steps over tau = 0.01..0.99 during training.
  double crossing_penalty = 10.0;
  // Squared second differences of the integrand across neighbouring roots.
  double roughness_penalty = 0.1;
};

nlohmann::json to_json(const QuantileConfig& cfg);
QuantileConfig quantile_config_from_json(const nlohmann::json& j);

/// C_0 plus C_1..C_{d-1} (stored at coeffs[1..]; coeffs[0] mirrors c0).
struct QuantileCoefficients {
  double c0 = 0.0;
  std::vector<double> coeffs;

  double quantile(double tau) const { return eval_quantile(c0, coeffs, tau); }
};

/// d positive integrand networks; net j sees (t_j, scaled window).
class QuantileGenerator {
 public:
  QuantileGenerator() = default;
  QuantileGenerator(const QuantileConfig& cfg, nn::ZScaler scaler);
  QuantileGenerator(int degree, std::size_t window, ConstraintKind kind, nn::ZScaler scaler,
                    std::vector<nn::DenseNet> nets);

  int degree() const { return degree_; }
  std::size_t window() const { return window_; }
  ConstraintKind constraint() const { return kind_; }
  const std::vector<double>& roots() const { return roots_; }
  const std::vector<nn::DenseNet>& nets() const { return nets_; }
  std::vector<nn::DenseNet>& mutable_nets() { return nets_; }
  const nn::ZScaler& scaler() const { return scaler_; }
  bool trained() const { return trained_; }
  void mark_trained() { trained_ = true; }

  /// Integrand values (after positive_transform) at every root, one row per
  /// window; windows are in original units (B x window).
  Eigen::MatrixXd integrand(const Eigen::MatrixXd& windows) const;

  QuantileCoefficients coefficients(std::span<const double> window, double point_forecast) const;
  double quantile(std::span<const double> window, double point_forecast, double tau) const;
  std::vector<double> quantiles(std::span<const double> window, double point_forecast,
                                std::span<const double> taus) const;

  /// Scaled net input rows (root column first) for net j.
  Eigen::MatrixXd net_input(const Eigen::MatrixXd& scaled_windows, std::size_t j) const;
  Eigen::MatrixXd scale_windows(const Eigen::MatrixXd& windows) const;

 private:
  int degree_ = 0;
  std::size_t window_ = 0;
  ConstraintKind kind_ = ConstraintKind::median;
  std::vector<double> roots_;
  std::vector<nn::DenseNet> nets_;
  nn::ZScaler scaler_;
  bool trained_ = false;
};

/// Per-row coefficients for a batch of windows (original units, B x window).
std::vector<QuantileCoefficients> compute_coefficients_batch(const QuantileGenerator& gen,
                                                             const Eigen::MatrixXd& windows,
                                                             std::span<const double> point_forecasts);

/// Coefficients for explicit integrand values at the roots (length d).
QuantileCoefficients coefficients_from_integrand(std::span<const double> values_at_roots, double point_forecast,
                                                 ConstraintKind kind);

/// (y - q)(tau - 1[y < q]).
double pinball_loss(double truth, double q, double tau);

struct QuantileTrainReport {
  std::vector<double> epoch_loss;  // mean pinball per row, summed over taus, scaled units
};

/// Trains on targets series[first_target .. first_target + n), where
/// point_forecasts[i] is the forecast for series[first_target + i]. Each row's
/// window is the `cfg.window` values before its target.
QuantileGenerator train_quantile(std::span<const double> series, std::span<const double> point_forecasts,
                                 std::size_t first_target, const QuantileConfig& cfg,
                                 QuantileTrainReport* report = nullptr);

nlohmann::json to_json(const QuantileGenerator& gen);
QuantileGenerator quantile_generator_from_json(const nlohmann::json& j);

}  // namespace hmix

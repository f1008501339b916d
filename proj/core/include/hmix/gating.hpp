#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "hmix/dataio.hpp"
#include "hmix/experts.hpp"
#include "hmix/hierarchy.hpp"
#include "hmix/neural.hpp"

namespace hmix {

struct GatingConfig {
  std::size_t window = 16;
  std::size_t hidden = 60;
  double learning_rate = 1e-4;
  std::size_t epochs = 1200;
  std::size_t batch_size = 16;
  double lambda = 0.1;
  /// Optional per-level overrides of lambda (level 0 is the root).
  std::map<std::size_t, double> level_lambda;
  /// Train the gate on the validation split only instead of train + validation.
  bool validation_only = false;
  /// Stop after this many epochs without improvement of the epoch loss; 0 disables.
  std::size_t patience = 0;
  std::uint64_t seed = 0;

  double lambda_for_level(std::size_t level) const;
};

nlohmann::json to_json(const GatingConfig& cfg);
GatingConfig gating_config_from_json(const nlohmann::json& j);

/// Window -> simplex weights over L experts. The window is z-scored with the
/// vertex scaler before entering the net.
class GatingNetwork {
 public:
  GatingNetwork() = default;
  GatingNetwork(std::size_t window, std::size_t hidden, std::size_t experts, nn::ZScaler scaler, std::uint64_t seed);
  GatingNetwork(nn::DenseNet net, nn::ZScaler scaler);
  /// Input-independent gate returning `weights` (which must lie on the simplex).
  static GatingNetwork constant(std::size_t window, std::vector<double> weights);

  std::size_t window() const { return window_; }
  std::size_t expert_count() const { return experts_; }
  bool is_constant() const { return !fixed_.empty(); }
  const std::vector<double>& fixed_weights() const { return fixed_; }
  const nn::DenseNet& net() const { return net_; }
  nn::DenseNet& mutable_net() { return net_; }
  const nn::ZScaler& scaler() const { return scaler_; }

  /// B x window (original units) -> B x L.
  Eigen::MatrixXd weights(const Eigen::MatrixXd& windows) const;
  std::vector<double> weights(std::span<const double> window) const;
  Eigen::MatrixXd scale_windows(const Eigen::MatrixXd& windows) const;

 private:
  std::size_t window_ = 0;
  std::size_t experts_ = 0;
  nn::DenseNet net_;
  nn::ZScaler scaler_;
  std::vector<double> fixed_;
};

nlohmann::json to_json(const GatingNetwork& gate);
GatingNetwork gating_network_from_json(const nlohmann::json& j);

/// sum_l weights[l] * forecasts[l] pointwise.
std::vector<double> combine_forecasts(std::span<const double> weights,
                                      const std::vector<std::vector<double>>& expert_forecasts);

/// mean((combined - truth)^2) + lambda * mean((combined - child_sum)^2).
double recon_loss(std::span<const double> combined, std::span<const double> truth,
                  std::optional<std::span<const double>> child_sum, double lambda);

/// Gate training material for one vertex. Row r targets series[first + r];
/// forecasts[l][r] is expert l's one-step forecast for that index.
struct GateTrainingData {
  std::span<const double> series;
  std::size_t first = 0;
  std::vector<std::vector<double>> forecasts;
  std::optional<std::vector<double>> child_sum;
};

struct GateTrainReport {
  std::vector<double> epoch_loss;
  /// Mean gate weights over the training rows after each epoch.
  std::vector<std::vector<double>> weight_trajectory;
};

GatingNetwork train_gate(const GateTrainingData& data, const GatingConfig& cfg, double lambda, std::uint64_t seed,
                         const nn::ZScaler& scaler, GateTrainReport* report = nullptr);

/// Experts plus the gate weighting them at one vertex.
struct MixtureForecaster {
  std::string vertex;
  std::vector<ExpertPtr> experts;
  GatingNetwork gate;
  GateTrainReport history;

  std::size_t min_history() const;
  /// Combined one-step forecast following `history`.
  double predict_next(std::span<const double> history) const;
  /// Per-expert one-step forecasts following `history`.
  std::vector<double> expert_forecasts(std::span<const double> history) const;
};

/// h-step recursive forecast; each step's combination is fed back.
std::vector<double> forecast_mixture(const MixtureForecaster& forecaster, std::span<const double> series,
                                     std::size_t h);

struct HierarchyTrainConfig {
  std::vector<ExpertSpec> roster;
  GatingConfig gating;
  /// Refit experts on train + validation once the gates are trained.
  bool refit_experts = true;
  std::size_t jobs = 1;
  std::uint64_t seed = 0;
};

struct HierarchyModel {
  std::map<std::string, MixtureForecaster> forecasters;
  /// Vertex row indices in the order they were trained.
  std::vector<std::vector<std::size_t>> training_order;
  /// Index of the first gate training target (shared by all vertices).
  std::size_t first_target = 0;
  /// Combined one-step forecasts over [first_target, val_end), per vertex row,
  /// produced by the trained gate against the pre-refit experts.
  std::vector<std::vector<double>> fitted;
};

/// First target index usable by every expert and the gate.
std::size_t first_gate_target(const std::vector<ExpertSpec>& roster, std::size_t window, const Split& split,
                              bool validation_only);

HierarchyModel train_hierarchy_bottom_up(const SeriesPanel& panel, const Hierarchy& h,
                                         const HierarchyTrainConfig& cfg);

/// Same experts as `trained`, weighted uniformly.
MixtureForecaster equal_weight(const MixtureForecaster& trained);

nlohmann::json to_json(const MixtureForecaster& f);
MixtureForecaster mixture_forecaster_from_json(const nlohmann::json& j);

}  // namespace hmix

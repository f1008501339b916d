#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "hmix/neural.hpp"

namespace hmix {

enum class ExpertKind { ar_ls, exp_smooth, seasonal_naive, moving_average, window_net };

const char* to_string(ExpertKind kind);
ExpertKind expert_kind_from_string(const std::string& name);

/// Hyperparameters for one expert. Only the fields relevant to `kind` are read.
struct ExpertSpec {
  ExpertKind kind = ExpertKind::ar_ls;
  std::size_t order = 4;   // ar_ls lag count
  bool trend = true;       // exp_smooth: Holt (level + trend) when true
  std::size_t period = 12;  // seasonal_naive
  std::size_t span = 8;     // moving_average
  std::size_t window = 16;  // window_net input width
  std::vector<std::size_t> hidden{32};
  std::size_t epochs = 200;
  double learning_rate = 1e-3;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
};

/// Default roster: ar_ls(4), Holt smoothing, seasonal_naive(period),
/// moving_average(8), window_net(window).
std::vector<ExpertSpec> default_roster(std::size_t period, std::size_t window, std::uint64_t seed);

nlohmann::json to_json(const ExpertSpec& spec);
ExpertSpec expert_spec_from_json(const nlohmann::json& j);

/// Uniform forecasting contract: fit once on a history prefix, then produce
/// one-step forecasts from any history. A forecast only reads the history it is
/// handed, so backtests cannot leak future values.
class Expert {
 public:
  virtual ~Expert() = default;

  virtual ExpertKind kind() const = 0;
  virtual std::string name() const = 0;
  /// Shortest history `predict_next` accepts.
  virtual std::size_t min_history() const = 0;
  /// Shortest series `fit` accepts.
  virtual std::size_t min_fit_length() const = 0;
  virtual std::unique_ptr<Expert> clone() const = 0;
  virtual nlohmann::json to_json() const = 0;

  /// Throws DataError when the series is shorter than min_fit_length().
  void fit(std::span<const double> series);
  bool fitted() const { return fitted_; }
  /// Length of the series passed to the last fit.
  std::size_t fit_end() const { return fit_end_; }

  /// One-step forecast of the value following `history`.
  double predict_next(std::span<const double> history) const;

 protected:
  virtual void do_fit(std::span<const double> series) = 0;
  virtual double do_predict(std::span<const double> history) const = 0;
  void restore_fit_state(std::size_t fit_end) {
    fitted_ = true;
    fit_end_ = fit_end;
  }

 private:
  bool fitted_ = false;
  std::size_t fit_end_ = 0;
};

using ExpertPtr = std::shared_ptr<const Expert>;

/// Least-squares autoregression with intercept on p lags.
class ArExpert final : public Expert {
 public:
  explicit ArExpert(std::size_t order);
  /// Pre-fitted model with the given intercept and lag coefficients (lag 1 first).
  static ArExpert with_coefficients(std::vector<double> coefficients, double intercept = 0.0);

  ExpertKind kind() const override { return ExpertKind::ar_ls; }
  std::string name() const override;
  std::size_t min_history() const override { return order_; }
  std::size_t min_fit_length() const override { return order_ + 1; }
  std::unique_ptr<Expert> clone() const override { return std::make_unique<ArExpert>(*this); }
  nlohmann::json to_json() const override;
  static ArExpert from_json(const nlohmann::json& j);

  const std::vector<double>& coefficients() const { return coefficients_; }
  double intercept() const { return intercept_; }
  /// True when the lagged design was rank deficient and a 1e-8 ridge was used.
  bool ridge_used() const { return ridge_used_; }

 protected:
  void do_fit(std::span<const double> series) override;
  double do_predict(std::span<const double> history) const override;

 private:
  std::size_t order_;
  std::vector<double> coefficients_;
  double intercept_ = 0.0;
  bool ridge_used_ = false;
};

/// Simple (level) or Holt (level + trend) exponential smoothing. Smoothing
/// constants come from a 0.05-step grid search on in-sample one-step SSE.
class ExpSmoothExpert final : public Expert {
 public:
  explicit ExpSmoothExpert(bool trend);
  ExpSmoothExpert(bool trend, double alpha, double beta);

  ExpertKind kind() const override { return ExpertKind::exp_smooth; }
  std::string name() const override { return trend_ ? "holt" : "exp_smooth"; }
  std::size_t min_history() const override { return 1; }
  std::size_t min_fit_length() const override { return 2; }
  std::unique_ptr<Expert> clone() const override { return std::make_unique<ExpSmoothExpert>(*this); }
  nlohmann::json to_json() const override;
  static ExpSmoothExpert from_json(const nlohmann::json& j);

  double alpha() const { return alpha_; }
  double beta() const { return beta_; }
  bool trend() const { return trend_; }

  /// In-sample one-step SSE for the given constants.
  static double one_step_sse(std::span<const double> series, bool trend, double alpha, double beta);

 protected:
  void do_fit(std::span<const double> series) override;
  double do_predict(std::span<const double> history) const override;

 private:
  bool trend_;
  double alpha_ = 0.5;
  double beta_ = 0.1;
};

/// x_{t+1} = x_{t+1-s}.
class SeasonalNaiveExpert final : public Expert {
 public:
  explicit SeasonalNaiveExpert(std::size_t period);

  ExpertKind kind() const override { return ExpertKind::seasonal_naive; }
  std::string name() const override;
  std::size_t min_history() const override { return period_; }
  std::size_t min_fit_length() const override { return period_ + 1; }
  std::unique_ptr<Expert> clone() const override { return std::make_unique<SeasonalNaiveExpert>(*this); }
  nlohmann::json to_json() const override;
  static SeasonalNaiveExpert from_json(const nlohmann::json& j);

  const std::vector<double>& last_season() const { return last_season_; }

 protected:
  void do_fit(std::span<const double> series) override;
  double do_predict(std::span<const double> history) const override;

 private:
  std::size_t period_;
  std::vector<double> last_season_;
};

/// Mean of the last `span` observations (fewer when the history is shorter).
class MovingAverageExpert final : public Expert {
 public:
  explicit MovingAverageExpert(std::size_t span);

  ExpertKind kind() const override { return ExpertKind::moving_average; }
  std::string name() const override;
  std::size_t min_history() const override { return 1; }
  std::size_t min_fit_length() const override { return 2; }
  std::unique_ptr<Expert> clone() const override { return std::make_unique<MovingAverageExpert>(*this); }
  nlohmann::json to_json() const override;
  static MovingAverageExpert from_json(const nlohmann::json& j);

 protected:
  void do_fit(std::span<const double>) override {}
  double do_predict(std::span<const double> history) const override;

 private:
  std::size_t span_;
};

/// Feed-forward net on the last `window` z-scored values, trained by Adam on
/// one-step squared error.
class WindowNetExpert final : public Expert {
 public:
  explicit WindowNetExpert(const ExpertSpec& spec);

  ExpertKind kind() const override { return ExpertKind::window_net; }
  std::string name() const override;
  std::size_t min_history() const override { return spec_.window; }
  std::size_t min_fit_length() const override { return spec_.window + 1; }
  std::unique_ptr<Expert> clone() const override { return std::make_unique<WindowNetExpert>(*this); }
  nlohmann::json to_json() const override;
  static WindowNetExpert from_json(const nlohmann::json& j);

  const nn::DenseNet& net() const { return net_; }
  const nn::ZScaler& scaler() const { return scaler_; }

 protected:
  void do_fit(std::span<const double> series) override;
  double do_predict(std::span<const double> history) const override;

 private:
  ExpertSpec spec_;
  nn::DenseNet net_;
  nn::ZScaler scaler_;
};

std::unique_ptr<Expert> make_expert(const ExpertSpec& spec);
std::unique_ptr<Expert> expert_from_json(const nlohmann::json& j);

/// One-step forecasts for indices from..to (inclusive); the forecast for index
/// j sees only series[0, j).
std::vector<double> rolling_forecasts(const Expert& expert, std::span<const double> series, std::size_t from,
                                      std::size_t to);

/// h-step forecast from the end of `series`, feeding each forecast back as the
/// newest observation.
std::vector<double> forecast_recursive(const Expert& expert, std::span<const double> series, std::size_t h);

}  // namespace hmix

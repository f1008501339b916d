#include "hmix/experts.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "hmix/error.hpp"

namespace hmix {

const char* to_string(ExpertKind kind) {
  switch (kind) {
    case ExpertKind::ar_ls: return "ar_ls";
    case ExpertKind::exp_smooth: return "exp_smooth";
    case ExpertKind::seasonal_naive: return "seasonal_naive";
    case ExpertKind::moving_average: return "moving_average";
    case ExpertKind::window_net: return "window_net";
  }
  return "ar_ls";
}

ExpertKind expert_kind_from_string(const std::string& name) {
  for (auto k : {ExpertKind::ar_ls, ExpertKind::exp_smooth, ExpertKind::seasonal_naive, ExpertKind::moving_average,
                 ExpertKind::window_net}) {
    if (name == to_string(k)) return k;
  }
  throw ConfigError("unknown expert kind '" + name + "'");
}

std::vector<ExpertSpec> default_roster(std::size_t period, std::size_t window, std::uint64_t seed) {
  std::vector<ExpertSpec> roster(5);
  roster[0].kind = ExpertKind::ar_ls;
  roster[0].order = 4;
  roster[1].kind = ExpertKind::exp_smooth;
  roster[1].trend = true;
  roster[2].kind = ExpertKind::seasonal_naive;
  roster[2].period = period;
  roster[3].kind = ExpertKind::moving_average;
  roster[3].span = 8;
  roster[4].kind = ExpertKind::window_net;
  roster[4].window = window;
  for (auto& s : roster) s.seed = seed;
  return roster;
}

nlohmann::json to_json(const ExpertSpec& spec) {
  return {{"kind", to_string(spec.kind)},
          {"order", spec.order},
          {"trend", spec.trend},
          {"period", spec.period},
          {"span", spec.span},
          {"window", spec.window},
          {"hidden", spec.hidden},
          {"epochs", spec.epochs},
          {"learning_rate", spec.learning_rate},
          {"batch_size", spec.batch_size},
          {"seed", spec.seed}};
}

ExpertSpec expert_spec_from_json(const nlohmann::json& j) {
  ExpertSpec s;
  try {
    s.kind = expert_kind_from_string(j.at("kind").get<std::string>());
    s.order = j.value("order", s.order);
    s.trend = j.value("trend", s.trend);
    s.period = j.value("period", s.period);
    s.span = j.value("span", s.span);
    s.window = j.value("window", s.window);
    s.hidden = j.value("hidden", s.hidden);
    s.epochs = j.value("epochs", s.epochs);
    s.learning_rate = j.value("learning_rate", s.learning_rate);
    s.batch_size = j.value("batch_size", s.batch_size);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed expert spec: ") + e.what());
  }
  return s;
}

void Expert::fit(std::span<const double> series) {
  if (series.size() < min_fit_length()) {
    throw DataError(name() + ": series of length " + std::to_string(series.size()) + " is too short (need " +
                    std::to_string(min_fit_length()) + ")");
  }
  for (double v : series)
    if (!std::isfinite(v)) throw DataError(name() + ": non-finite value in fit series");
  do_fit(series);
  fitted_ = true;
  fit_end_ = series.size();
}

double Expert::predict_next(std::span<const double> history) const {
  if (!fitted_) throw ConfigError(name() + ": predict before fit");
  if (history.size() < min_history()) {
    throw DataError(name() + ": history of length " + std::to_string(history.size()) + " is too short (need " +
                    std::to_string(min_history()) + ")");
  }
  const double y = do_predict(history);
  if (!std::isfinite(y)) throw NumericError(name() + ": non-finite forecast");
  return y;
}

// ---------------------------------------------------------------- ar_ls

ArExpert::ArExpert(std::size_t order) : order_(order), coefficients_(order, 0.0) {
  if (order == 0) throw ConfigError("ar_ls order must be positive");
}

ArExpert ArExpert::with_coefficients(std::vector<double> coefficients, double intercept) {
  ArExpert e(coefficients.size());
  e.coefficients_ = std::move(coefficients);
  e.intercept_ = intercept;
  e.restore_fit_state(0);
  return e;
}

std::string ArExpert::name() const { return "ar_ls(" + std::to_string(order_) + ")"; }

void ArExpert::do_fit(std::span<const double> series) {
  const auto rows = static_cast<Eigen::Index>(series.size() - order_);
  const auto cols = static_cast<Eigen::Index>(order_ + 1);
  Eigen::MatrixXd x(rows, cols);
  Eigen::VectorXd y(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const std::size_t t = static_cast<std::size_t>(r) + order_;
    x(r, 0) = 1.0;
    for (std::size_t lag = 1; lag <= order_; ++lag) x(r, static_cast<Eigen::Index>(lag)) = series[t - lag];
    y(r) = series[t];
  }
  Eigen::VectorXd beta;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  if (rows >= cols && qr.rank() == cols) {
    beta = qr.solve(y);
    ridge_used_ = false;
  } else {
    Eigen::MatrixXd gram = x.transpose() * x;
    gram.diagonal().array() += 1e-8;
    beta = gram.ldlt().solve(x.transpose() * y);
    ridge_used_ = true;
  }
  intercept_ = beta(0);
  for (std::size_t i = 0; i < order_; ++i) coefficients_[i] = beta(static_cast<Eigen::Index>(i + 1));
}

double ArExpert::do_predict(std::span<const double> history) const {
  double y = intercept_;
  const std::size_t n = history.size();
  for (std::size_t lag = 1; lag <= order_; ++lag) y += coefficients_[lag - 1] * history[n - lag];
  return y;
}

nlohmann::json ArExpert::to_json() const {
  return {{"kind", "ar_ls"},     {"order", order_},         {"coefficients", coefficients_},
          {"intercept", intercept_}, {"ridge_used", ridge_used_}, {"fit_end", fit_end()}};
}

ArExpert ArExpert::from_json(const nlohmann::json& j) {
  ArExpert e = with_coefficients(j.at("coefficients").get<std::vector<double>>(), j.at("intercept").get<double>());
  e.ridge_used_ = j.value("ridge_used", false);
  e.restore_fit_state(j.value("fit_end", std::size_t{0}));
  return e;
}

// ---------------------------------------------------------------- exp_smooth

ExpSmoothExpert::ExpSmoothExpert(bool trend) : trend_(trend) {}

ExpSmoothExpert::ExpSmoothExpert(bool trend, double alpha, double beta) : trend_(trend), alpha_(alpha), beta_(beta) {
  if (!(alpha > 0.0 && alpha <= 1.0) || !(beta >= 0.0 && beta <= 1.0)) {
    throw ConfigError("smoothing constants must lie in (0, 1]");
  }
  restore_fit_state(0);
}

namespace {

// Runs the smoothing filter over `series` and returns the one-step forecast of
// the next value; accumulates one-step SSE from index 2 (Holt) or 1 (simple).
double smooth(std::span<const double> series, bool trend, double alpha, double beta, double* sse) {
  double level = series[0];
  double slope = (trend && series.size() >= 2) ? series[1] - series[0] : 0.0;
  std::size_t start = 1;
  if (trend && series.size() >= 2) {
    level = series[1];
    start = 2;
  }
  double total = 0.0;
  for (std::size_t t = start; t < series.size(); ++t) {
    const double forecast = level + slope;
    const double err = series[t] - forecast;
    total += err * err;
    const double new_level = alpha * series[t] + (1.0 - alpha) * forecast;
    if (trend) slope = beta * (new_level - level) + (1.0 - beta) * slope;
    level = new_level;
  }
  if (sse) *sse = total;
  return level + slope;
}

}  // namespace

double ExpSmoothExpert::one_step_sse(std::span<const double> series, bool trend, double alpha, double beta) {
  double sse = 0.0;
  smooth(series, trend, alpha, beta, &sse);
  return sse;
}

void ExpSmoothExpert::do_fit(std::span<const double> series) {
  double best = std::numeric_limits<double>::infinity();
  for (int a = 1; a <= 19; ++a) {
    const double alpha = 0.05 * a;
    for (int b = 1; b <= (trend_ ? 19 : 1); ++b) {
      const double beta = trend_ ? 0.05 * b : 0.0;
      const double sse = one_step_sse(series, trend_, alpha, beta);
      if (sse < best) {
        best = sse;
        alpha_ = alpha;
        beta_ = beta;
      }
    }
  }
}

double ExpSmoothExpert::do_predict(std::span<const double> history) const {
  return smooth(history, trend_, alpha_, beta_, nullptr);
}

nlohmann::json ExpSmoothExpert::to_json() const {
  return {{"kind", "exp_smooth"}, {"trend", trend_}, {"alpha", alpha_}, {"beta", beta_}, {"fit_end", fit_end()}};
}

ExpSmoothExpert ExpSmoothExpert::from_json(const nlohmann::json& j) {
  ExpSmoothExpert e(j.at("trend").get<bool>());
  e.alpha_ = j.at("alpha").get<double>();
  e.beta_ = j.at("beta").get<double>();
  e.restore_fit_state(j.value("fit_end", std::size_t{0}));
  return e;
}

// ---------------------------------------------------------------- seasonal_naive

SeasonalNaiveExpert::SeasonalNaiveExpert(std::size_t period) : period_(period) {
  if (period == 0) throw ConfigError("seasonal period must be positive");
}

std::string SeasonalNaiveExpert::name() const { return "seasonal_naive(" + std::to_string(period_) + ")"; }

void SeasonalNaiveExpert::do_fit(std::span<const double> series) {
  last_season_.assign(series.end() - static_cast<std::ptrdiff_t>(period_), series.end());
}

double SeasonalNaiveExpert::do_predict(std::span<const double> history) const {
  return history[history.size() - period_];
}

nlohmann::json SeasonalNaiveExpert::to_json() const {
  return {{"kind", "seasonal_naive"}, {"period", period_}, {"last_season", last_season_}, {"fit_end", fit_end()}};
}

SeasonalNaiveExpert SeasonalNaiveExpert::from_json(const nlohmann::json& j) {
  SeasonalNaiveExpert e(j.at("period").get<std::size_t>());
  e.last_season_ = j.value("last_season", std::vector<double>{});
  e.restore_fit_state(j.value("fit_end", std::size_t{0}));
  return e;
}

// ---------------------------------------------------------------- moving_average

MovingAverageExpert::MovingAverageExpert(std::size_t span) : span_(span) {
  if (span == 0) throw ConfigError("moving-average span must be positive");
}

std::string MovingAverageExpert::name() const { return "moving_average(" + std::to_string(span_) + ")"; }

double MovingAverageExpert::do_predict(std::span<const double> history) const {
  const std::size_t w = std::min(span_, history.size());
  const auto tail = history.subspan(history.size() - w);
  return std::accumulate(tail.begin(), tail.end(), 0.0) / static_cast<double>(w);
}

nlohmann::json MovingAverageExpert::to_json() const {
  return {{"kind", "moving_average"}, {"span", span_}, {"fit_end", fit_end()}};
}

MovingAverageExpert MovingAverageExpert::from_json(const nlohmann::json& j) {
  MovingAverageExpert e(j.at("span").get<std::size_t>());
  e.restore_fit_state(j.value("fit_end", std::size_t{0}));
  return e;
}

// ---------------------------------------------------------------- window_net

WindowNetExpert::WindowNetExpert(const ExpertSpec& spec) : spec_(spec) {
  if (spec.window == 0) throw ConfigError("window_net window must be positive");
  if (spec.hidden.empty()) throw ConfigError("window_net needs at least one hidden layer");
}

std::string WindowNetExpert::name() const { return "window_net(" + std::to_string(spec_.window) + ")"; }

void WindowNetExpert::do_fit(std::span<const double> series) {
  scaler_ = nn::ZScaler::fit(series);
  std::vector<nn::LayerSpec> layers;
  for (auto h : spec_.hidden) layers.push_back({h, nn::Activation::tanh});
  layers.push_back({1, nn::Activation::identity});
  net_ = nn::DenseNet(spec_.window, layers, spec_.seed);
  if (scaler_.degenerate) {
    // A constant series is forecast exactly by a zero output in scaled units.
    auto& out = net_.mutable_layers().back();
    out.weight.setZero();
    out.bias.setZero();
    return;
  }
  const std::size_t w = spec_.window;
  const std::size_t rows = series.size() - w;
  Eigen::MatrixXd inputs(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(w));
  Eigen::VectorXd targets(static_cast<Eigen::Index>(rows));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < w; ++c)
      inputs(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = scaler_.forward(series[r + c]);
    targets(static_cast<Eigen::Index>(r)) = scaler_.forward(series[r + w]);
  }
  nn::AdamState adam(net_, {spec_.learning_rate, 0.9, 0.999, 1e-8});
  std::mt19937_64 rng(spec_.seed ^ 0x9e3779b97f4a7c15ULL);
  for (std::size_t epoch = 0; epoch < spec_.epochs; ++epoch) {
    for (const auto& batch : nn::minibatches(rows, spec_.batch_size, rng)) {
      Eigen::MatrixXd xb(static_cast<Eigen::Index>(batch.size()), static_cast<Eigen::Index>(w));
      Eigen::MatrixXd yb(static_cast<Eigen::Index>(batch.size()), 1);
      for (std::size_t i = 0; i < batch.size(); ++i) {
        xb.row(static_cast<Eigen::Index>(i)) = inputs.row(static_cast<Eigen::Index>(batch[i]));
        yb(static_cast<Eigen::Index>(i), 0) = targets(static_cast<Eigen::Index>(batch[i]));
      }
      const auto cache = net_.forward(xb);
      const Eigen::MatrixXd grad = 2.0 * (cache.output - yb) / static_cast<double>(batch.size());
      nn::adam_step(net_, net_.backward(cache, grad), adam);
    }
  }
}

double WindowNetExpert::do_predict(std::span<const double> history) const {
  const std::size_t w = spec_.window;
  Eigen::MatrixXd x(1, static_cast<Eigen::Index>(w));
  const auto tail = history.subspan(history.size() - w);
  for (std::size_t c = 0; c < w; ++c) x(0, static_cast<Eigen::Index>(c)) = scaler_.forward(tail[c]);
  return scaler_.inverse(net_.predict(x)(0, 0));
}

nlohmann::json WindowNetExpert::to_json() const {
  return {{"kind", "window_net"},
          {"spec", hmix::to_json(spec_)},
          {"net", nn::to_json(net_)},
          {"scaler", nn::to_json(scaler_)},
          {"fit_end", fit_end()}};
}

WindowNetExpert WindowNetExpert::from_json(const nlohmann::json& j) {
  WindowNetExpert e(expert_spec_from_json(j.at("spec")));
  e.net_ = nn::dense_net_from_json(j.at("net"));
  e.scaler_ = nn::zscaler_from_json(j.at("scaler"));
  e.restore_fit_state(j.value("fit_end", std::size_t{0}));
  return e;
}

// ---------------------------------------------------------------- factories

std::unique_ptr<Expert> make_expert(const ExpertSpec& spec) {
  switch (spec.kind) {
    case ExpertKind::ar_ls: return std::make_unique<ArExpert>(spec.order);
    case ExpertKind::exp_smooth: return std::make_unique<ExpSmoothExpert>(spec.trend);
    case ExpertKind::seasonal_naive: return std::make_unique<SeasonalNaiveExpert>(spec.period);
    case ExpertKind::moving_average: return std::make_unique<MovingAverageExpert>(spec.span);
    case ExpertKind::window_net: return std::make_unique<WindowNetExpert>(spec);
  }
  throw ConfigError("unknown expert kind");
}

std::unique_ptr<Expert> expert_from_json(const nlohmann::json& j) {
  try {
    switch (expert_kind_from_string(j.at("kind").get<std::string>())) {
      case ExpertKind::ar_ls: return std::make_unique<ArExpert>(ArExpert::from_json(j));
      case ExpertKind::exp_smooth: return std::make_unique<ExpSmoothExpert>(ExpSmoothExpert::from_json(j));
      case ExpertKind::seasonal_naive: return std::make_unique<SeasonalNaiveExpert>(SeasonalNaiveExpert::from_json(j));
      case ExpertKind::moving_average: return std::make_unique<MovingAverageExpert>(MovingAverageExpert::from_json(j));
      case ExpertKind::window_net: return std::make_unique<WindowNetExpert>(WindowNetExpert::from_json(j));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed expert checkpoint: ") + e.what());
  }
  throw ConfigError("unknown expert kind");
}

std::vector<double> rolling_forecasts(const Expert& expert, std::span<const double> series, std::size_t from,
                                      std::size_t to) {
  if (from > to || to >= series.size()) {
    throw DataError("rolling_forecasts: range [" + std::to_string(from) + ", " + std::to_string(to) +
                    "] outside series of length " + std::to_string(series.size()));
  }
  if (from < expert.min_history()) {
    throw DataError("rolling_forecasts: " + expert.name() + " needs " + std::to_string(expert.min_history()) +
                    " values before the first forecast");
  }
  std::vector<double> out;
  out.reserve(to - from + 1);
  for (std::size_t j = from; j <= to; ++j) out.push_back(expert.predict_next(series.first(j)));
  return out;
}

std::vector<double> forecast_recursive(const Expert& expert, std::span<const double> series, std::size_t h) {
  if (h == 0) throw DataError("forecast horizon must be >= 1");
  std::vector<double> history(series.begin(), series.end());
  std::vector<double> out;
  out.reserve(h);
  for (std::size_t k = 0; k < h; ++k) {
    const double y = expert.predict_next(history);
    out.push_back(y);
    history.push_back(y);
  }
  return out;
}

}  // namespace hmix

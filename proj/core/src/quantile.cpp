#include "hmix/quantile.hpp"

#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

#include "hmix/error.hpp"

namespace hmix {

nlohmann::json to_json(const QuantileConfig& cfg) {
  return {{"degree", cfg.degree},
          {"window", cfg.window},
          {"hidden", cfg.hidden},
          {"taus", cfg.taus},
          {"constraint", to_string(cfg.constraint)},
          {"learning_rate", cfg.learning_rate},
          {"epochs", cfg.epochs},
          {"batch_size", cfg.batch_size},
          {"seed", cfg.seed},
          {"crossing_penalty", cfg.crossing_penalty},
          {"roughness_penalty", cfg.roughness_penalty}};
}

QuantileConfig quantile_config_from_json(const nlohmann::json& j) {
  QuantileConfig c;
  try {
    c.degree = j.value("degree", c.degree);
    c.window = j.value("window", c.window);
    c.hidden = j.value("hidden", c.hidden);
    c.taus = j.value("taus", c.taus);
    c.constraint = constraint_kind_from_string(j.value("constraint", std::string(to_string(c.constraint))));
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.crossing_penalty = j.value("crossing_penalty", c.crossing_penalty);
    c.roughness_penalty = j.value("roughness_penalty", c.roughness_penalty);
    if (c.crossing_penalty < 0.0 || c.roughness_penalty < 0.0) throw ConfigError("quantile penalties must be >= 0");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed quantile config: ") + e.what());
  }
  return c;
}

namespace {

void validate_taus(std::span<const double> taus) {
  if (taus.empty()) throw ConfigError("quantile grid is empty");
  for (double t : taus)
    if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("quantile level " + std::to_string(t) + " outside [0, 1]");
}

std::vector<nn::DenseNet> make_nets(int degree, std::size_t window, const std::vector<std::size_t>& hidden,
                                    std::uint64_t seed) {
  std::vector<nn::LayerSpec> layers;
  for (auto h : hidden) layers.push_back({h, nn::Activation::relu});
  layers.push_back({1, nn::Activation::identity});
  std::vector<nn::DenseNet> nets;
  std::seed_seq seq{seed, std::uint64_t{0x51a7e}};
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(degree));
  seq.generate(seeds.begin(), seeds.end());
  for (int j = 0; j < degree; ++j) nets.emplace_back(window + 1, layers, seeds[static_cast<std::size_t>(j)]);
  return nets;
}

}  // namespace

QuantileGenerator::QuantileGenerator(const QuantileConfig& cfg, nn::ZScaler scaler)
    : QuantileGenerator(cfg.degree, cfg.window, cfg.constraint, scaler,
                        make_nets(std::max(cfg.degree, 2), cfg.window, cfg.hidden, cfg.seed)) {}

QuantileGenerator::QuantileGenerator(int degree, std::size_t window, ConstraintKind kind, nn::ZScaler scaler,
                                     std::vector<nn::DenseNet> nets)
    : degree_(degree), window_(window), kind_(kind), nets_(std::move(nets)), scaler_(scaler) {
  if (degree < 2) throw ConfigError("quantile degree must be >= 2");
  if (window == 0) throw ConfigError("quantile window must be positive");
  if (nets_.size() != static_cast<std::size_t>(degree)) {
    throw ConfigError("expected " + std::to_string(degree) + " integrand nets, got " + std::to_string(nets_.size()));
  }
  for (const auto& n : nets_) {
    if (n.input_dim() != window + 1 || n.output_dim() != 1) {
      throw ConfigError("integrand net must map window + 1 inputs to one output");
    }
  }
  roots_ = chebyshev_roots(degree);
}

Eigen::MatrixXd QuantileGenerator::scale_windows(const Eigen::MatrixXd& windows) const {
  if (static_cast<std::size_t>(windows.cols()) != window_) {
    throw DataError("window width " + std::to_string(windows.cols()) + " != " + std::to_string(window_));
  }
  return ((windows.array() - scaler_.mean) / scaler_.scale).matrix();
}

Eigen::MatrixXd QuantileGenerator::net_input(const Eigen::MatrixXd& scaled_windows, std::size_t j) const {
  Eigen::MatrixXd x(scaled_windows.rows(), scaled_windows.cols() + 1);
  x.col(0).setConstant(roots_[j]);
  x.rightCols(scaled_windows.cols()) = scaled_windows;
  return x;
}

Eigen::MatrixXd QuantileGenerator::integrand(const Eigen::MatrixXd& windows) const {
  const Eigen::MatrixXd scaled = scale_windows(windows);
  Eigen::MatrixXd out(windows.rows(), degree_);
  for (std::size_t j = 0; j < nets_.size(); ++j) {
    out.col(static_cast<Eigen::Index>(j)) = nn::positive_transform(nets_[j].predict(net_input(scaled, j))).col(0);
  }
  return out;
}

QuantileCoefficients coefficients_from_integrand(std::span<const double> values_at_roots, double point_forecast,
                                                 ConstraintKind kind) {
  QuantileCoefficients qc;
  qc.coeffs = antiderivative_coefficients(values_at_roots);
  qc.c0 = constrain_c0(point_forecast, qc.coeffs, kind);
  qc.coeffs[0] = qc.c0;
  return qc;
}

std::vector<QuantileCoefficients> compute_coefficients_batch(const QuantileGenerator& gen,
                                                             const Eigen::MatrixXd& windows,
                                                             std::span<const double> point_forecasts) {
  if (static_cast<std::size_t>(windows.rows()) != point_forecasts.size()) {
    throw DataError("one point forecast per window row is required");
  }
  if (gen.nets().size() != static_cast<std::size_t>(gen.degree())) {
    throw ConfigError("integrand net count differs from the degree");
  }
  // Integrand is learned in scaled units; rescaling it keeps the curve in the
  // original units so the constraint pins the point forecast exactly.
  const Eigen::MatrixXd values = gen.integrand(windows) * gen.scaler().scale;
  std::vector<QuantileCoefficients> out;
  out.reserve(point_forecasts.size());
  std::vector<double> row(static_cast<std::size_t>(gen.degree()));
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    for (Eigen::Index j = 0; j < values.cols(); ++j) row[static_cast<std::size_t>(j)] = values(r, j);
    out.push_back(coefficients_from_integrand(row, point_forecasts[static_cast<std::size_t>(r)], gen.constraint()));
  }
  return out;
}

QuantileCoefficients QuantileGenerator::coefficients(std::span<const double> window, double point_forecast) const {
  Eigen::MatrixXd w(1, static_cast<Eigen::Index>(window.size()));
  for (std::size_t i = 0; i < window.size(); ++i) w(0, static_cast<Eigen::Index>(i)) = window[i];
  const double y[1] = {point_forecast};
  return compute_coefficients_batch(*this, w, y).front();
}

double QuantileGenerator::quantile(std::span<const double> window, double point_forecast, double tau) const {
  return coefficients(window, point_forecast).quantile(tau);
}

std::vector<double> QuantileGenerator::quantiles(std::span<const double> window, double point_forecast,
                                                 std::span<const double> taus) const {
  const auto qc = coefficients(window, point_forecast);
  std::vector<double> out;
  out.reserve(taus.size());
  for (double t : taus) out.push_back(qc.quantile(t));
  return out;
}

double pinball_loss(double truth, double q, double tau) {
  return (truth - q) * (tau - (truth < q ? 1.0 : 0.0));
}

QuantileGenerator train_quantile(std::span<const double> series, std::span<const double> point_forecasts,
                                 std::size_t first_target, const QuantileConfig& cfg, QuantileTrainReport* report) {
  validate_taus(cfg.taus);
  if (cfg.degree < 2) throw ConfigError("quantile degree must be >= 2");
  if (first_target < cfg.window) throw DataError("first quantile target leaves no room for a full window");
  const std::size_t rows = point_forecasts.size();
  if (rows == 0) throw DataError("no quantile training rows");
  if (first_target + rows > series.size()) throw DataError("quantile training rows run past the series end");

  const auto scaler = nn::ZScaler::fit(series.first(first_target + rows));
  QuantileGenerator gen(cfg, scaler);
  const auto d = static_cast<std::size_t>(cfg.degree);
  const std::size_t w = cfg.window;

  Eigen::MatrixXd windows(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(w));
  Eigen::VectorXd target(static_cast<Eigen::Index>(rows));
  Eigen::VectorXd point(static_cast<Eigen::Index>(rows));
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t t = first_target + r;
    for (std::size_t c = 0; c < w; ++c) windows(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = series[t - w + c];
    target(static_cast<Eigen::Index>(r)) = scaler.forward(series[t]);
    point(static_cast<Eigen::Index>(r)) = scaler.forward(point_forecasts[r]);
  }
  const Eigen::MatrixXd scaled = gen.scale_windows(windows);

  // q_tau = yhat + W.row(tau) . P, linear in the integrand values P.
  const auto ntau = static_cast<Eigen::Index>(cfg.taus.size());
  Eigen::MatrixXd weights(ntau, static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < ntau; ++i) {
    const auto wt = quantile_weights(cfg.degree, cfg.taus[static_cast<std::size_t>(i)], cfg.constraint);
    for (std::size_t j = 0; j < d; ++j) weights(i, static_cast<Eigen::Index>(j)) = wt[j];
  }
  // Consecutive differences q(tau_{k+1}) - q(tau_k) on the evaluation grid.
  Eigen::MatrixXd steps(98, static_cast<Eigen::Index>(d));
  {
    auto prev = quantile_weights(cfg.degree, 0.01, cfg.constraint);
    for (int k = 2; k <= 99; ++k) {
      const auto cur = quantile_weights(cfg.degree, k / 100.0, cfg.constraint);
      for (std::size_t j = 0; j < d; ++j) steps(k - 2, static_cast<Eigen::Index>(j)) = cur[j] - prev[j];
      prev = cur;
    }
  }
  Eigen::RowVectorXd taus(ntau);
  for (Eigen::Index i = 0; i < ntau; ++i) taus(i) = cfg.taus[static_cast<std::size_t>(i)];

  std::vector<Eigen::MatrixXd> inputs;
  for (std::size_t j = 0; j < d; ++j) inputs.push_back(gen.net_input(scaled, j));
  std::vector<nn::AdamState> adam;
  for (const auto& net : gen.nets()) adam.emplace_back(net, nn::AdamConfig{cfg.learning_rate, 0.9, 0.999, 1e-8});

  std::mt19937_64 rng(cfg.seed ^ 0x7f4a7c15ULL);
  auto& nets = gen.mutable_nets();
  std::vector<nn::ForwardCache> caches(d);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double total = 0.0;
    for (const auto& batch : nn::minibatches(rows, cfg.batch_size, rng)) {
      const auto b = static_cast<Eigen::Index>(batch.size());
      Eigen::MatrixXd raw(b, static_cast<Eigen::Index>(d));
      for (std::size_t j = 0; j < d; ++j) {
        Eigen::MatrixXd xb(b, inputs[j].cols());
        for (Eigen::Index i = 0; i < b; ++i) xb.row(i) = inputs[j].row(static_cast<Eigen::Index>(batch[static_cast<std::size_t>(i)]));
        caches[j] = nets[j].forward(xb);
        raw.col(static_cast<Eigen::Index>(j)) = caches[j].output.col(0);
      }
      const Eigen::MatrixXd P = nn::positive_transform(raw);
      // dL/dq for each (row, tau): -(tau - 1[y < q]), averaged over the batch.
      Eigen::MatrixXd dq(b, ntau);
      for (Eigen::Index i = 0; i < b; ++i) {
        const auto r = static_cast<Eigen::Index>(batch[static_cast<std::size_t>(i)]);
        for (Eigen::Index k = 0; k < ntau; ++k) {
          const double q = point(r) + weights.row(k).dot(P.row(i));
          total += pinball_loss(target(r), q, taus(k));
          dq(i, k) = -(taus(k) - (target(r) < q ? 1.0 : 0.0)) / static_cast<double>(b);
        }
      }
      Eigen::MatrixXd dP = dq * weights;  // b x d
      const double inv_b = 1.0 / static_cast<double>(b);
      if (cfg.crossing_penalty > 0.0) {
        const Eigen::MatrixXd gaps = P * steps.transpose();
        for (Eigen::Index i = 0; i < b; ++i) {
          for (Eigen::Index k = 0; k < gaps.cols(); ++k) {
            if (gaps(i, k) < 0.0) {
              total -= cfg.crossing_penalty * gaps(i, k);
              dP.row(i) -= cfg.crossing_penalty * inv_b * steps.row(k);
            }
          }
        }
      }
      if (cfg.roughness_penalty > 0.0 && d >= 3) {
        for (Eigen::Index i = 0; i < b; ++i) {
          for (std::size_t j = 1; j + 1 < d; ++j) {
            const auto jj = static_cast<Eigen::Index>(j);
            const double r2 = P(i, jj - 1) - 2.0 * P(i, jj) + P(i, jj + 1);
            total += cfg.roughness_penalty * r2 * r2;
            const double gr = 2.0 * cfg.roughness_penalty * r2 * inv_b;
            dP(i, jj - 1) += gr;
            dP(i, jj) -= 2.0 * gr;
            dP(i, jj + 1) += gr;
          }
        }
      }
      for (std::size_t j = 0; j < d; ++j) {
        Eigen::MatrixXd g(b, 1);
        for (Eigen::Index i = 0; i < b; ++i) {
          g(i, 0) = dP(i, static_cast<Eigen::Index>(j)) * nn::positive_transform_derivative(raw(i, static_cast<Eigen::Index>(j)));
        }
        nn::adam_step(nets[j], nets[j].backward(caches[j], g), adam[j]);
      }
    }
    if (report) report->epoch_loss.push_back(total / static_cast<double>(rows));
  }
  gen.mark_trained();
  return gen;
}

nlohmann::json to_json(const QuantileGenerator& gen) {
  nlohmann::json nets = nlohmann::json::array();
  for (const auto& n : gen.nets()) nets.push_back(nn::to_json(n));
  return {{"degree", gen.degree()},
          {"window", gen.window()},
          {"constraint", to_string(gen.constraint())},
          {"scaler", nn::to_json(gen.scaler())},
          {"trained", gen.trained()},
          {"nets", nets}};
}

QuantileGenerator quantile_generator_from_json(const nlohmann::json& j) {
  try {
    std::vector<nn::DenseNet> nets;
    for (const auto& n : j.at("nets")) nets.push_back(nn::dense_net_from_json(n));
    QuantileGenerator gen(j.at("degree").get<int>(), j.at("window").get<std::size_t>(),
                          constraint_kind_from_string(j.at("constraint").get<std::string>()),
                          nn::zscaler_from_json(j.at("scaler")), std::move(nets));
    if (j.value("trained", false)) gen.mark_trained();
    return gen;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed quantile checkpoint: ") + e.what());
  }
}

}  // namespace hmix

#include "hmix/gating.hpp"

#include <cmath>
#include <limits>
#include <random>

#include <nlohmann/json.hpp>

#include "hmix/error.hpp"
#include "hmix/parallel.hpp"

namespace hmix {

namespace {

constexpr double kSimplexTol = 1e-6;

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  // splitmix64 over the combined key
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (a + 1) + 0xbf58476d1ce4e5b9ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void check_simplex(std::span<const double> w) {
  double s = 0.0;
  for (double v : w) {
    if (!(v >= -kSimplexTol && v <= 1.0 + kSimplexTol)) throw NumericError("gate weight outside [0, 1]");
    s += v;
  }
  if (std::abs(s - 1.0) > kSimplexTol) throw NumericError("gate weights do not sum to one");
}

}  // namespace

double GatingConfig::lambda_for_level(std::size_t level) const {
  auto it = level_lambda.find(level);
  return it == level_lambda.end() ? lambda : it->second;
}

nlohmann::json to_json(const GatingConfig& cfg) {
  nlohmann::json levels = nlohmann::json::object();
  for (const auto& [lvl, lam] : cfg.level_lambda) levels[std::to_string(lvl)] = lam;
  return {{"window", cfg.window},       {"hidden", cfg.hidden},   {"learning_rate", cfg.learning_rate},
          {"epochs", cfg.epochs},       {"batch_size", cfg.batch_size}, {"lambda", cfg.lambda},
          {"level_lambda", levels},     {"validation_only", cfg.validation_only},
          {"patience", cfg.patience},   {"seed", cfg.seed}};
}

GatingConfig gating_config_from_json(const nlohmann::json& j) {
  GatingConfig c;
  try {
    c.window = j.value("window", c.window);
    c.hidden = j.value("hidden", c.hidden);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lambda = j.value("lambda", c.lambda);
    if (j.contains("level_lambda")) {
      for (const auto& [k, v] : j.at("level_lambda").items()) c.level_lambda[std::stoul(k)] = v.get<double>();
    }
    c.validation_only = j.value("validation_only", c.validation_only);
    c.patience = j.value("patience", c.patience);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed gating config: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw ConfigError("level_lambda keys must be level numbers");
  }
  if (c.lambda < 0.0) throw ConfigError("lambda must be non-negative");
  for (const auto& [lvl, lam] : c.level_lambda)
    if (lam < 0.0) throw ConfigError("lambda must be non-negative");
  if (c.window == 0 || c.batch_size == 0) throw ConfigError("gate window and batch size must be positive");
  return c;
}

// ---------------------------------------------------------------- GatingNetwork

GatingNetwork::GatingNetwork(std::size_t window, std::size_t hidden, std::size_t experts, nn::ZScaler scaler,
                             std::uint64_t seed)
    : window_(window), experts_(experts), scaler_(scaler) {
  if (window == 0 || hidden == 0 || experts == 0) throw ConfigError("gate dimensions must be positive");
  const nn::LayerSpec layers[] = {{hidden, nn::Activation::tanh}, {experts, nn::Activation::softmax}};
  net_ = nn::DenseNet(window, layers, seed);
}

GatingNetwork::GatingNetwork(nn::DenseNet net, nn::ZScaler scaler)
    : window_(net.input_dim()), experts_(net.output_dim()), net_(std::move(net)), scaler_(scaler) {
  if (net_.layers().back().activation != nn::Activation::softmax) throw ConfigError("gate output must be softmax");
}

GatingNetwork GatingNetwork::constant(std::size_t window, std::vector<double> weights) {
  if (weights.empty()) throw ConfigError("constant gate needs at least one weight");
  check_simplex(weights);
  GatingNetwork g;
  g.window_ = window;
  g.experts_ = weights.size();
  g.fixed_ = std::move(weights);
  return g;
}

Eigen::MatrixXd GatingNetwork::scale_windows(const Eigen::MatrixXd& windows) const {
  if (static_cast<std::size_t>(windows.cols()) != window_) {
    throw DataError("gate window width " + std::to_string(windows.cols()) + " != " + std::to_string(window_));
  }
  return ((windows.array() - scaler_.mean) / scaler_.scale).matrix();
}

Eigen::MatrixXd GatingNetwork::weights(const Eigen::MatrixXd& windows) const {
  if (is_constant()) {
    Eigen::MatrixXd out(windows.rows(), static_cast<Eigen::Index>(experts_));
    for (Eigen::Index r = 0; r < out.rows(); ++r)
      for (std::size_t l = 0; l < experts_; ++l) out(r, static_cast<Eigen::Index>(l)) = fixed_[l];
    return out;
  }
  return net_.predict(scale_windows(windows));
}

std::vector<double> GatingNetwork::weights(std::span<const double> window) const {
  if (window.size() < window_) throw DataError("history shorter than the gate window");
  const auto tail = window.subspan(window.size() - window_);
  Eigen::MatrixXd x(1, static_cast<Eigen::Index>(window_));
  for (std::size_t i = 0; i < window_; ++i) x(0, static_cast<Eigen::Index>(i)) = tail[i];
  const Eigen::MatrixXd w = weights(x);
  std::vector<double> out(w.data(), w.data() + w.size());
  check_simplex(out);
  return out;
}

nlohmann::json to_json(const GatingNetwork& gate) {
  if (gate.is_constant()) return {{"window", gate.window()}, {"constant", gate.fixed_weights()}};
  return {{"window", gate.window()}, {"net", nn::to_json(gate.net())}, {"scaler", nn::to_json(gate.scaler())}};
}

GatingNetwork gating_network_from_json(const nlohmann::json& j) {
  try {
    if (j.contains("constant")) {
      return GatingNetwork::constant(j.at("window").get<std::size_t>(), j.at("constant").get<std::vector<double>>());
    }
    return GatingNetwork(nn::dense_net_from_json(j.at("net")), nn::zscaler_from_json(j.at("scaler")));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed gate checkpoint: ") + e.what());
  }
}

// ---------------------------------------------------------------- losses

std::vector<double> combine_forecasts(std::span<const double> weights,
                                      const std::vector<std::vector<double>>& expert_forecasts) {
  if (weights.size() != expert_forecasts.size()) throw DataError("weight count differs from expert count");
  if (expert_forecasts.empty()) throw DataError("no expert forecasts to combine");
  check_simplex(weights);
  const std::size_t n = expert_forecasts.front().size();
  std::vector<double> out(n, 0.0);
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (expert_forecasts[l].size() != n) throw DataError("expert forecasts differ in length");
    for (std::size_t i = 0; i < n; ++i) out[i] += weights[l] * expert_forecasts[l][i];
  }
  return out;
}

double recon_loss(std::span<const double> combined, std::span<const double> truth,
                  std::optional<std::span<const double>> child_sum, double lambda) {
  if (lambda < 0.0) throw ConfigError("lambda must be non-negative");
  if (combined.size() != truth.size()) throw DataError("combined and truth differ in length");
  if (combined.empty()) throw DataError("empty loss input");
  if (child_sum && child_sum->size() != combined.size()) throw DataError("child sum differs in length");
  const auto n = static_cast<double>(combined.size());
  double mse = 0.0;
  double reg = 0.0;
  for (std::size_t i = 0; i < combined.size(); ++i) {
    mse += (combined[i] - truth[i]) * (combined[i] - truth[i]);
    if (child_sum) reg += (combined[i] - (*child_sum)[i]) * (combined[i] - (*child_sum)[i]);
  }
  return mse / n + (child_sum ? lambda * reg / n : 0.0);
}

// ---------------------------------------------------------------- training

GatingNetwork train_gate(const GateTrainingData& data, const GatingConfig& cfg, double lambda, std::uint64_t seed,
                         const nn::ZScaler& scaler, GateTrainReport* report) {
  if (lambda < 0.0) throw ConfigError("lambda must be non-negative");
  const std::size_t L = data.forecasts.size();
  if (L == 0) throw DataError("gate training needs at least one expert");
  const std::size_t rows = data.forecasts.front().size();
  if (rows == 0) throw DataError("gate training span is empty");
  for (const auto& f : data.forecasts)
    if (f.size() != rows) throw DataError("an expert lacks rolling forecasts over the gate span");
  if (data.child_sum && data.child_sum->size() != rows) throw DataError("child forecasts do not cover the gate span");
  const std::size_t w = cfg.window;
  if (data.first < w) throw DataError("gate span starts before a full window is available");
  if (data.first + rows > data.series.size()) throw DataError("gate span runs past the series end");

  const auto R = static_cast<Eigen::Index>(rows);
  Eigen::MatrixXd windows(R, static_cast<Eigen::Index>(w));
  Eigen::MatrixXd F(R, static_cast<Eigen::Index>(L));
  Eigen::VectorXd y(R);
  Eigen::VectorXd child = Eigen::VectorXd::Zero(R);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t t = data.first + r;
    const auto ri = static_cast<Eigen::Index>(r);
    for (std::size_t c = 0; c < w; ++c) windows(ri, static_cast<Eigen::Index>(c)) = data.series[t - w + c];
    for (std::size_t l = 0; l < L; ++l) F(ri, static_cast<Eigen::Index>(l)) = scaler.forward(data.forecasts[l][r]);
    y(ri) = scaler.forward(data.series[t]);
    if (data.child_sum) child(ri) = scaler.forward((*data.child_sum)[r]);
  }
  const bool regularize = data.child_sum.has_value() && lambda > 0.0;

  GatingNetwork gate(w, cfg.hidden, L, scaler, seed);
  const Eigen::MatrixXd X = gate.scale_windows(windows);
  nn::DenseNet& net = gate.mutable_net();
  nn::AdamState adam(net, {cfg.learning_rate, 0.9, 0.999, 1e-8});
  std::mt19937_64 rng(mix_seed(seed, 0x6a7e));

  double best = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double total = 0.0;
    for (const auto& batch : nn::minibatches(rows, cfg.batch_size, rng)) {
      const auto b = static_cast<Eigen::Index>(batch.size());
      Eigen::MatrixXd xb(b, X.cols());
      Eigen::MatrixXd fb(b, F.cols());
      Eigen::VectorXd yb(b);
      Eigen::VectorXd cb(b);
      for (Eigen::Index i = 0; i < b; ++i) {
        const auto r = static_cast<Eigen::Index>(batch[static_cast<std::size_t>(i)]);
        xb.row(i) = X.row(r);
        fb.row(i) = F.row(r);
        yb(i) = y(r);
        cb(i) = child(r);
      }
      const auto cache = net.forward(xb);
      const Eigen::MatrixXd& g = cache.output;
      for (Eigen::Index i = 0; i < b; ++i) {
        if (std::abs(g.row(i).sum() - 1.0) > kSimplexTol) throw NumericError("gate output left the simplex");
      }
      const Eigen::VectorXd comb = (g.array() * fb.array()).rowwise().sum();
      Eigen::VectorXd dcomb = 2.0 * (comb - yb) / static_cast<double>(b);
      total += (comb - yb).squaredNorm();
      if (regularize) {
        dcomb += 2.0 * lambda * (comb - cb) / static_cast<double>(b);
        total += lambda * (comb - cb).squaredNorm();
      }
      const Eigen::MatrixXd dg = fb.array().colwise() * dcomb.array();
      nn::adam_step(net, net.backward(cache, dg), adam);
    }
    const double epoch_loss = total / static_cast<double>(rows);
    if (report) {
      report->epoch_loss.push_back(epoch_loss);
      const Eigen::RowVectorXd mean_w = net.predict(X).colwise().mean();
      report->weight_trajectory.emplace_back(mean_w.data(), mean_w.data() + mean_w.size());
    }
    if (cfg.patience > 0) {
      if (epoch_loss < best - 1e-12) {
        best = epoch_loss;
        stale = 0;
      } else if (++stale >= cfg.patience) {
        break;
      }
    }
  }
  return gate;
}

// ---------------------------------------------------------------- mixture

std::size_t MixtureForecaster::min_history() const {
  std::size_t m = gate.window();
  for (const auto& e : experts) m = std::max(m, e->min_history());
  return m;
}

std::vector<double> MixtureForecaster::expert_forecasts(std::span<const double> history) const {
  std::vector<double> out;
  out.reserve(experts.size());
  for (const auto& e : experts) out.push_back(e->predict_next(history));
  return out;
}

double MixtureForecaster::predict_next(std::span<const double> history) const {
  if (experts.size() != gate.expert_count()) throw ConfigError("gate output size differs from expert count");
  if (history.size() < min_history()) throw DataError("history shorter than the mixture needs");
  const auto w = gate.weights(history);
  const auto f = expert_forecasts(history);
  double y = 0.0;
  for (std::size_t l = 0; l < f.size(); ++l) y += w[l] * f[l];
  return y;
}

std::vector<double> forecast_mixture(const MixtureForecaster& forecaster, std::span<const double> series,
                                     std::size_t h) {
  if (h == 0) throw DataError("forecast horizon must be >= 1");
  if (series.size() < forecaster.gate.window()) throw DataError("series shorter than the gate window");
  std::vector<double> history(series.begin(), series.end());
  std::vector<double> out;
  out.reserve(h);
  for (std::size_t k = 0; k < h; ++k) {
    const double y = forecaster.predict_next(history);
    out.push_back(y);
    history.push_back(y);
  }
  return out;
}

MixtureForecaster equal_weight(const MixtureForecaster& trained) {
  MixtureForecaster f;
  f.vertex = trained.vertex;
  f.experts = trained.experts;
  const std::size_t L = trained.experts.size();
  f.gate = GatingNetwork::constant(trained.gate.window(), std::vector<double>(L, 1.0 / static_cast<double>(L)));
  return f;
}

std::size_t first_gate_target(const std::vector<ExpertSpec>& roster, std::size_t window, const Split& split,
                              bool validation_only) {
  std::size_t first = window;
  for (const auto& spec : roster) first = std::max(first, make_expert(spec)->min_history());
  if (validation_only) first = std::max(first, split.train_end);
  if (first >= split.val_end) throw DataError("no gate training targets before the test split");
  return first;
}

HierarchyModel train_hierarchy_bottom_up(const SeriesPanel& panel, const Hierarchy& h,
                                         const HierarchyTrainConfig& cfg) {
  if (cfg.roster.empty()) throw ConfigError("expert roster is empty");
  if (panel.values.size() != h.size()) throw DataError("panel does not cover every vertex");
  const Split split = panel.split;
  const std::size_t n = h.size();
  const std::size_t L = cfg.roster.size();
  const std::size_t first = first_gate_target(cfg.roster, cfg.gating.window, split, cfg.gating.validation_only);
  const std::size_t last = split.val_end - 1;
  for (const auto& spec : cfg.roster) {
    if (make_expert(spec)->min_fit_length() > split.train_end) {
      throw DataError("training split is too short to fit " + make_expert(spec)->name());
    }
  }

  HierarchyModel model;
  model.first_target = first;
  model.training_order = h.levels_bottom_up();
  model.fitted.assign(n, {});

  // Experts: fit on the training split, then roll over the gate span.
  std::vector<std::vector<std::unique_ptr<Expert>>> experts(n);
  std::vector<std::vector<std::vector<double>>> rolling(n);
  parallel_for(n, cfg.jobs, [&](std::size_t v) {
    const auto& x = panel.values[v];
    for (std::size_t l = 0; l < L; ++l) {
      ExpertSpec spec = cfg.roster[l];
      spec.seed = mix_seed(cfg.seed ^ spec.seed, v, l);
      auto e = make_expert(spec);
      e->fit(std::span<const double>(x).first(split.train_end));
      rolling[v].push_back(rolling_forecasts(*e, x, first, last));
      experts[v].push_back(std::move(e));
    }
  });

  std::vector<nn::ZScaler> scalers(n);
  for (std::size_t v = 0; v < n; ++v) scalers[v] = nn::ZScaler::fit(std::span<const double>(panel.values[v]).first(split.train_end));

  std::vector<GatingNetwork> gates(n);
  std::vector<GateTrainReport> reports(n);
  for (const auto& level : model.training_order) {
    parallel_for(level.size(), cfg.jobs, [&](std::size_t k) {
      const std::size_t v = level[k];
      GateTrainingData data;
      data.series = panel.values[v];
      data.first = first;
      data.forecasts = rolling[v];
      if (!h.is_leaf(v)) {
        std::vector<double> sum(last - first + 1, 0.0);
        for (const auto& c : h.children(v)) {
          for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += c.sign * model.fitted[c.index][i];
        }
        data.child_sum = std::move(sum);
      }
      const double lambda = cfg.gating.lambda_for_level(h.level(v));
      gates[v] = train_gate(data, cfg.gating, lambda, mix_seed(cfg.seed ^ cfg.gating.seed, v, 0x9a7e), scalers[v],
                            &reports[v]);
      // Combined in-sample forecasts feed the parent's regularizer.
      Eigen::MatrixXd windows(static_cast<Eigen::Index>(last - first + 1), static_cast<Eigen::Index>(cfg.gating.window));
      for (std::size_t t = first; t <= last; ++t)
        for (std::size_t c = 0; c < cfg.gating.window; ++c)
          windows(static_cast<Eigen::Index>(t - first), static_cast<Eigen::Index>(c)) =
              panel.values[v][t - cfg.gating.window + c];
      const Eigen::MatrixXd g = gates[v].weights(windows);
      std::vector<double> comb(last - first + 1, 0.0);
      for (std::size_t i = 0; i < comb.size(); ++i)
        for (std::size_t l = 0; l < L; ++l) comb[i] += g(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(l)) * rolling[v][l][i];
      model.fitted[v] = std::move(comb);
    });
  }

  if (cfg.refit_experts) {
    parallel_for(n, cfg.jobs, [&](std::size_t v) {
      for (auto& e : experts[v]) e->fit(std::span<const double>(panel.values[v]).first(split.val_end));
    });
  }

  for (std::size_t v = 0; v < n; ++v) {
    MixtureForecaster f;
    f.vertex = h.id(v);
    for (auto& e : experts[v]) f.experts.push_back(ExpertPtr(std::move(e)));
    f.gate = std::move(gates[v]);
    f.history = std::move(reports[v]);
    model.forecasters.emplace(f.vertex, std::move(f));
  }
  return model;
}

nlohmann::json to_json(const MixtureForecaster& f) {
  nlohmann::json experts = nlohmann::json::array();
  for (const auto& e : f.experts) experts.push_back(e->to_json());
  return {{"vertex", f.vertex},
          {"experts", experts},
          {"gate", to_json(f.gate)},
          {"epoch_loss", f.history.epoch_loss},
          {"weight_trajectory", f.history.weight_trajectory}};
}

MixtureForecaster mixture_forecaster_from_json(const nlohmann::json& j) {
  try {
    MixtureForecaster f;
    f.vertex = j.at("vertex").get<std::string>();
    for (const auto& e : j.at("experts")) f.experts.push_back(ExpertPtr(expert_from_json(e)));
    f.gate = gating_network_from_json(j.at("gate"));
    f.history.epoch_loss = j.value("epoch_loss", std::vector<double>{});
    f.history.weight_trajectory = j.value("weight_trajectory", std::vector<std::vector<double>>{});
    if (f.gate.expert_count() != f.experts.size()) throw ConfigError("gate output size differs from expert count");
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed mixture checkpoint: ") + e.what());
  }
}

}  // namespace hmix

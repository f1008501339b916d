#include "hmix/neural.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "hmix/error.hpp"

namespace hmix::nn {

namespace {

std::atomic<std::uint64_t> next_token{1};

bool all_finite(const Eigen::MatrixXd& m) { return m.allFinite(); }

Eigen::MatrixXd activate(Activation a, const Eigen::MatrixXd& z) {
  switch (a) {
    case Activation::identity:
      return z;
    case Activation::tanh:
      return z.array().tanh().matrix();
    case Activation::relu:
      return z.cwiseMax(0.0);
    case Activation::softplus:
      return z.unaryExpr([](double v) { return softplus(v); });
    case Activation::softmax: {
      Eigen::MatrixXd out(z.rows(), z.cols());
      for (Eigen::Index r = 0; r < z.rows(); ++r) {
        const double mx = z.row(r).maxCoeff();
        Eigen::RowVectorXd e = (z.row(r).array() - mx).exp().matrix();
        out.row(r) = e / e.sum();
      }
      return out;
    }
  }
  return z;
}

// Gradient w.r.t. the pre-activation given the gradient w.r.t. the output.
Eigen::MatrixXd activation_backward(Activation a, const Eigen::MatrixXd& z, const Eigen::MatrixXd& y,
                                    const Eigen::MatrixXd& grad_y) {
  switch (a) {
    case Activation::identity:
      return grad_y;
    case Activation::tanh:
      return (grad_y.array() * (1.0 - y.array().square())).matrix();
    case Activation::relu:
      return (grad_y.array() * (z.array() > 0.0).cast<double>()).matrix();
    case Activation::softplus:
      return (grad_y.array() * z.unaryExpr([](double v) { return sigmoid(v); }).array()).matrix();
    case Activation::softmax: {
      Eigen::MatrixXd out(y.rows(), y.cols());
      for (Eigen::Index r = 0; r < y.rows(); ++r) {
        const double dot = grad_y.row(r).dot(y.row(r));
        out.row(r) = (y.row(r).array() * (grad_y.row(r).array() - dot)).matrix();
      }
      return out;
    }
  }
  return grad_y;
}

}  // namespace

const char* to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::softmax: return "softmax";
    case Activation::softplus: return "softplus";
  }
  return "identity";
}

Activation activation_from_string(const std::string& name) {
  for (auto a : {Activation::identity, Activation::tanh, Activation::relu, Activation::softmax, Activation::softplus}) {
    if (name == to_string(a)) return a;
  }
  throw ConfigError("unknown activation '" + name + "'");
}

InstanceToken::InstanceToken() : value_(next_token.fetch_add(1)) {}
InstanceToken::InstanceToken(const InstanceToken&) : value_(next_token.fetch_add(1)) {}
InstanceToken& InstanceToken::operator=(const InstanceToken&) {
  value_ = next_token.fetch_add(1);
  return *this;
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double positive_transform(double raw) { return softplus(raw + 1e-5) + 1e-3; }

Eigen::MatrixXd positive_transform(const Eigen::MatrixXd& raw) {
  return raw.unaryExpr([](double v) { return positive_transform(v); });
}

double positive_transform_derivative(double raw) { return sigmoid(raw + 1e-5); }

DenseNet::DenseNet(std::size_t input_dim, std::span<const LayerSpec> layers, std::uint64_t seed) {
  if (input_dim == 0 || layers.empty()) throw ConfigError("network needs a positive input width and >= 1 layer");
  std::mt19937_64 rng(seed);
  std::size_t fan_in = input_dim;
  for (const auto& spec : layers) {
    if (spec.units == 0) throw ConfigError("layer width must be positive");
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> unif(-bound, bound);
    Layer layer;
    layer.weight.resize(static_cast<Eigen::Index>(fan_in), static_cast<Eigen::Index>(spec.units));
    layer.bias.resize(static_cast<Eigen::Index>(spec.units));
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = unif(rng);
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = unif(rng);
    layer.activation = spec.activation;
    layers_.push_back(std::move(layer));
    fan_in = spec.units;
  }
}

DenseNet::DenseNet(std::vector<Layer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw ConfigError("network needs at least one layer");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.bias.size() != l.weight.cols()) throw ConfigError("bias width does not match weight columns");
    if (i > 0 && layers_[i - 1].weight.cols() != l.weight.rows()) {
      throw ConfigError("layer " + std::to_string(i) + " input width does not match previous output width");
    }
  }
}

std::size_t DenseNet::input_dim() const {
  return layers_.empty() ? 0 : static_cast<std::size_t>(layers_.front().weight.rows());
}

std::size_t DenseNet::output_dim() const {
  return layers_.empty() ? 0 : static_cast<std::size_t>(layers_.back().weight.cols());
}

std::size_t DenseNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

ForwardCache DenseNet::forward(const Eigen::MatrixXd& x) const {
  if (layers_.empty()) throw ConfigError("forward on an empty network");
  if (static_cast<std::size_t>(x.cols()) != input_dim()) {
    throw DataError("network expects " + std::to_string(input_dim()) + " input columns, got " +
                    std::to_string(x.cols()));
  }
  if (!all_finite(x)) throw NumericError("non-finite network input");
  ForwardCache cache;
  cache.owner = token_.value();
  cache.revision = revision_;
  cache.inputs.reserve(layers_.size());
  cache.pre_activations.reserve(layers_.size());
  Eigen::MatrixXd current = x;
  for (const auto& layer : layers_) {
    Eigen::MatrixXd z = current * layer.weight;
    z.rowwise() += layer.bias;
    cache.inputs.push_back(std::move(current));
    current = activate(layer.activation, z);
    cache.pre_activations.push_back(std::move(z));
  }
  if (!all_finite(current)) throw NumericError("non-finite network output");
  cache.output = std::move(current);
  return cache;
}

Gradients DenseNet::backward(const ForwardCache& cache, const Eigen::MatrixXd& grad_output) const {
  if (cache.owner != token_.value() || cache.revision != revision_ || cache.inputs.size() != layers_.size()) {
    throw ConfigError("stale forward cache passed to backward");
  }
  if (grad_output.rows() != cache.output.rows() || grad_output.cols() != cache.output.cols()) {
    throw DataError("output gradient shape does not match the forward output");
  }
  Gradients grads;
  grads.layers.resize(layers_.size());
  Eigen::MatrixXd grad = grad_output;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const auto& layer = layers_[i];
    const Eigen::MatrixXd& y = (i + 1 < layers_.size()) ? cache.inputs[i + 1] : cache.output;
    const Eigen::MatrixXd dz = activation_backward(layer.activation, cache.pre_activations[i], y, grad);
    grads.layers[i].weight = cache.inputs[i].transpose() * dz;
    grads.layers[i].bias = dz.colwise().sum();
    grad = dz * layer.weight.transpose();
  }
  grads.input = std::move(grad);
  return grads;
}

Gradients DenseNet::zero_gradients() const {
  Gradients g;
  for (const auto& l : layers_) {
    g.layers.push_back({Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()),
                        Eigen::RowVectorXd::Zero(l.bias.size())});
  }
  return g;
}

AdamState::AdamState(const DenseNet& net, AdamConfig cfg) : config(cfg) {
  first_moment = net.zero_gradients().layers;
  second_moment = first_moment;
}

void adam_step(DenseNet& net, const Gradients& grads, AdamState& state) {
  const auto& layers = net.layers();
  if (grads.layers.size() != layers.size() || state.first_moment.size() != layers.size()) {
    throw ConfigError("adam_step: gradient/state layout does not match the network");
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (grads.layers[i].weight.rows() != layers[i].weight.rows() ||
        grads.layers[i].weight.cols() != layers[i].weight.cols() ||
        grads.layers[i].bias.size() != layers[i].bias.size()) {
      throw ConfigError("adam_step: gradient shape mismatch in layer " + std::to_string(i));
    }
    if (!grads.layers[i].weight.allFinite() || !grads.layers[i].bias.allFinite()) {
      throw NumericError("adam_step: non-finite gradient in layer " + std::to_string(i));
    }
  }
  const auto& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  auto& mutable_layers = net.mutable_layers();
  auto update = [&](auto& param, const auto& g, auto& m, auto& v) {
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
    param.array() -= c.learning_rate * (m.array() / correction1) / ((v.array() / correction2).sqrt() + c.epsilon);
  };
  for (std::size_t i = 0; i < mutable_layers.size(); ++i) {
    update(mutable_layers[i].weight, grads.layers[i].weight, state.first_moment[i].weight,
           state.second_moment[i].weight);
    update(mutable_layers[i].bias, grads.layers[i].bias, state.first_moment[i].bias, state.second_moment[i].bias);
  }
}

ZScaler ZScaler::fit(std::span<const double> values) {
  ZScaler s;
  if (values.empty()) return s;
  const double n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  const double sd = std::sqrt(ss / n);
  if (sd > 1e-12 * std::max(1.0, std::abs(s.mean))) {
    s.scale = sd;
  } else {
    s.scale = 1.0;
    s.degenerate = true;
  }
  return s;
}

std::vector<std::vector<std::size_t>> minibatches(std::size_t n, std::size_t batch_size, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  if (batch_size == 0) batch_size = n;
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + batch_size)));
  }
  return out;
}

nlohmann::json to_json(const DenseNet& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : net.layers()) {
    std::vector<double> w(l.weight.data(), l.weight.data() + l.weight.size());
    std::vector<double> b(l.bias.data(), l.bias.data() + l.bias.size());
    layers.push_back({{"rows", l.weight.rows()},
                      {"cols", l.weight.cols()},
                      {"activation", to_string(l.activation)},
                      {"weight", w},
                      {"bias", b}});
  }
  return {{"layers", layers}};
}

DenseNet dense_net_from_json(const nlohmann::json& j) {
  std::vector<Layer> layers;
  try {
    for (const auto& lj : j.at("layers")) {
      Layer l;
      const auto rows = lj.at("rows").get<Eigen::Index>();
      const auto cols = lj.at("cols").get<Eigen::Index>();
      const auto w = lj.at("weight").get<std::vector<double>>();
      const auto b = lj.at("bias").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(w.size()) != rows * cols || static_cast<Eigen::Index>(b.size()) != cols) {
        throw ConfigError("checkpoint layer has inconsistent parameter counts");
      }
      l.weight = Eigen::Map<const Eigen::MatrixXd>(w.data(), rows, cols);
      l.bias = Eigen::Map<const Eigen::RowVectorXd>(b.data(), cols);
      l.activation = activation_from_string(lj.at("activation").get<std::string>());
      layers.push_back(std::move(l));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed network checkpoint: ") + e.what());
  }
  return DenseNet(std::move(layers));
}

nlohmann::json to_json(const ZScaler& s) {
  return {{"mean", s.mean}, {"scale", s.scale}, {"degenerate", s.degenerate}};
}

ZScaler zscaler_from_json(const nlohmann::json& j) {
  ZScaler s;
  s.mean = j.at("mean").get<double>();
  s.scale = j.at("scale").get<double>();
  s.degenerate = j.value("degenerate", false);
  return s;
}

}  // namespace hmix::nn

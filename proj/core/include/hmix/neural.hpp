#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

namespace hmix::nn {

enum class Activation { identity, tanh, relu, softmax, softplus };

const char* to_string(Activation a);
Activation activation_from_string(const std::string& name);

/// Fully connected layer acting on row-major batches: y = act(x W + b).
struct Layer {
  Eigen::MatrixXd weight;  // fan_in x fan_out
  Eigen::RowVectorXd bias;
  Activation activation = Activation::identity;
};

struct LayerSpec {
  std::size_t units;
  Activation activation;
};

/// Per-instance identity used to detect caches from a different or modified net.
class InstanceToken {
 public:
  InstanceToken();
  InstanceToken(const InstanceToken&);
  InstanceToken& operator=(const InstanceToken&);
  std::uint64_t value() const { return value_; }

 private:
  std::uint64_t value_;
};

struct ForwardCache {
  std::vector<Eigen::MatrixXd> inputs;          // input to each layer
  std::vector<Eigen::MatrixXd> pre_activations;  // x W + b per layer
  Eigen::MatrixXd output;
  std::uint64_t owner = 0;
  std::uint64_t revision = 0;
};

struct LayerGrad {
  Eigen::MatrixXd weight;
  Eigen::RowVectorXd bias;
};

struct Gradients {
  std::vector<LayerGrad> layers;
  Eigen::MatrixXd input;
};

class DenseNet {
 public:
  DenseNet() = default;
  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation for weights and biases.
  DenseNet(std::size_t input_dim, std::span<const LayerSpec> layers, std::uint64_t seed);
  /// Adopts explicit layers; throws ConfigError when dimensions do not chain.
  explicit DenseNet(std::vector<Layer> layers);

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::size_t parameter_count() const;
  bool empty() const { return layers_.empty(); }

  const std::vector<Layer>& layers() const { return layers_; }
  /// Mutable access invalidates outstanding caches.
  std::vector<Layer>& mutable_layers() {
    ++revision_;
    return layers_;
  }

  /// Throws DataError on a width mismatch and NumericError on non-finite
  /// input or output.
  ForwardCache forward(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd predict(const Eigen::MatrixXd& x) const { return forward(x).output; }

  /// Gradients of sum(grad_output .* output) with respect to every parameter
  /// and the input. Throws ConfigError for a stale or foreign cache.
  Gradients backward(const ForwardCache& cache, const Eigen::MatrixXd& grad_output) const;

  Gradients zero_gradients() const;

  std::uint64_t revision() const { return revision_; }

 private:
  std::vector<Layer> layers_;
  InstanceToken token_;
  std::uint64_t revision_ = 0;
};

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamState() = default;
  AdamState(const DenseNet& net, AdamConfig cfg);

  AdamConfig config;
  std::vector<LayerGrad> first_moment;
  std::vector<LayerGrad> second_moment;
  std::uint64_t step = 0;
};

/// Bias-corrected Adam update. Throws NumericError (and leaves the net and
/// state untouched) if any gradient entry is non-finite.
void adam_step(DenseNet& net, const Gradients& grads, AdamState& state);

/// softplus(o + 1e-5) + 1e-3, elementwise; every output is >= 1e-3.
double positive_transform(double raw);
Eigen::MatrixXd positive_transform(const Eigen::MatrixXd& raw);
/// d positive_transform / d raw.
double positive_transform_derivative(double raw);

double softplus(double x);
double sigmoid(double x);

/// Mean/standard-deviation scaler; a zero deviation falls back to 1.
struct ZScaler {
  double mean = 0.0;
  double scale = 1.0;
  bool degenerate = false;  // true when the fitted data had zero variance

  static ZScaler fit(std::span<const double> values);
  double forward(double x) const { return (x - mean) / scale; }
  double inverse(double z) const { return mean + scale * z; }
};

/// Shuffled mini-batch index lists covering [0, n).
std::vector<std::vector<std::size_t>> minibatches(std::size_t n, std::size_t batch_size, std::mt19937_64& rng);

nlohmann::json to_json(const DenseNet& net);
DenseNet dense_net_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ZScaler& s);
ZScaler zscaler_from_json(const nlohmann::json& j);

}  // namespace hmix::nn

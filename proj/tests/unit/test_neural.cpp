#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "hmix/error.hpp"
#include "hmix/neural.hpp"
#include "oracles.hpp"

using namespace hmix;
using namespace hmix::nn;

namespace {

DenseNet single_layer(Eigen::MatrixXd w, Eigen::RowVectorXd b, Activation a) {
  return DenseNet(std::vector<Layer>{Layer{std::move(w), std::move(b), a}});
}

double max_rel_error(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), 1e-3});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

}  // namespace

TEST_CASE("identity layer with zero weights returns the bias") {
  Eigen::RowVectorXd b(2);
  b << 0.5, -1.5;
  const auto net = single_layer(Eigen::MatrixXd::Zero(3, 2), b, Activation::identity);
  const auto y = net.predict(Eigen::MatrixXd::Random(4, 3));
  for (Eigen::Index r = 0; r < 4; ++r) CHECK(y.row(r) == b);
}

TEST_CASE("softmax with equal logits is uniform") {
  const auto net = single_layer(Eigen::MatrixXd::Zero(2, 5), Eigen::RowVectorXd::Constant(5, 0.3), Activation::softmax);
  const auto y = net.predict(Eigen::MatrixXd::Random(3, 2));
  CHECK((y.array() - 0.2).abs().maxCoeff() < 1e-15);
}

TEST_CASE("softplus of zero is ln 2") {
  const auto net = single_layer(Eigen::MatrixXd::Zero(1, 1), Eigen::RowVectorXd::Zero(1), Activation::softplus);
  CHECK(net.predict(Eigen::MatrixXd::Ones(1, 1))(0, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("forward rejects wrong widths and non-finite input") {
  const auto net = single_layer(Eigen::MatrixXd::Zero(2, 1), Eigen::RowVectorXd::Zero(1), Activation::identity);
  CHECK_THROWS_AS(net.forward(Eigen::MatrixXd::Zero(1, 3)), DataError);
  Eigen::MatrixXd bad(1, 2);
  bad << 1.0, std::nan("");
  CHECK_THROWS_AS(net.forward(bad), NumericError);
  CHECK_THROWS_AS(DenseNet(std::vector<Layer>{Layer{Eigen::MatrixXd::Zero(2, 3), Eigen::RowVectorXd::Zero(3)},
                                              Layer{Eigen::MatrixXd::Zero(2, 1), Eigen::RowVectorXd::Zero(1)}}),
                  ConfigError);
}

TEST_CASE("linear least-squares gradient matches the closed form") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0, 1);
  Eigen::MatrixXd X(8, 3);
  Eigen::VectorXd y(8);
  Eigen::MatrixXd w(3, 1);
  for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = g(rng);
  for (Eigen::Index i = 0; i < 8; ++i) y(i) = g(rng);
  for (Eigen::Index i = 0; i < 3; ++i) w(i, 0) = g(rng);
  const auto net = single_layer(w, Eigen::RowVectorXd::Zero(1), Activation::identity);
  const auto cache = net.forward(X);
  const Eigen::MatrixXd grad_out = 2.0 * (cache.output - y) / 8.0;
  const auto grads = net.backward(cache, grad_out);
  const Eigen::VectorXd expected = 2.0 * X.transpose() * (X * w - y) / 8.0;
  CHECK((grads.layers[0].weight - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("zero output gradient gives zero parameter gradients") {
  const LayerSpec spec[] = {{4, Activation::tanh}, {2, Activation::softmax}};
  const DenseNet net(3, spec, 9);
  const auto cache = net.forward(Eigen::MatrixXd::Random(5, 3));
  const auto grads = net.backward(cache, Eigen::MatrixXd::Zero(5, 2));
  for (const auto& l : grads.layers) {
    CHECK(l.weight.isZero());
    CHECK(l.bias.isZero());
  }
}

TEST_CASE("backward matches central differences for every activation") {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> g(0, 1);
  for (auto act : {Activation::identity, Activation::tanh, Activation::relu, Activation::softmax, Activation::softplus}) {
    for (int trial = 0; trial < 20; ++trial) {
      const LayerSpec spec[] = {{5, act == Activation::softmax ? Activation::tanh : act}, {3, act}};
      const DenseNet net(4, spec, static_cast<std::uint64_t>(trial) + 100);
      Eigen::MatrixXd x(6, 4);
      Eigen::MatrixXd w(6, 3);
      for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = g(rng);
      const auto grads = net.backward(net.forward(x), w);
      const auto analytic = oracle::flatten_gradients(grads);
      const auto numeric = oracle::numeric_parameter_gradient(net, x, w, 1e-5);
      REQUIRE(analytic.size() == numeric.size());
      CHECK(max_rel_error(analytic, numeric) <= 1e-4);
    }
  }
}

TEST_CASE("stale caches are rejected") {
  const LayerSpec spec[] = {{2, Activation::tanh}};
  DenseNet net(2, spec, 1);
  const auto cache = net.forward(Eigen::MatrixXd::Ones(1, 2));
  net.mutable_layers()[0].bias(0) += 1.0;
  CHECK_THROWS_AS(net.backward(cache, Eigen::MatrixXd::Ones(1, 2)), ConfigError);
  DenseNet other(2, spec, 1);
  CHECK_NOTHROW(other.backward(other.forward(Eigen::MatrixXd::Ones(1, 2)), Eigen::MatrixXd::Ones(1, 2)));
  const DenseNet copy = other;
  CHECK_THROWS_AS(copy.backward(other.forward(Eigen::MatrixXd::Ones(1, 2)), Eigen::MatrixXd::Ones(1, 2)), ConfigError);
}

TEST_CASE("Adam first step and moment accumulation") {
  auto net = single_layer(Eigen::MatrixXd::Constant(1, 1, 1.0), Eigen::RowVectorXd::Zero(1), Activation::identity);
  AdamState st(net, AdamConfig{0.1, 0.9, 0.999, 1e-8});
  Gradients g = net.zero_gradients();
  g.layers[0].weight(0, 0) = 0.5;
  adam_step(net, g, st);
  // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
  CHECK(net.layers()[0].weight(0, 0) == doctest::Approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-14));
  CHECK(net.layers()[0].bias(0) == 0.0);
  adam_step(net, g, st);
  CHECK(st.step == 2);
  CHECK(st.second_moment[0].weight(0, 0) == doctest::Approx(0.999 * 0.001 * 0.25 + 0.001 * 0.25).epsilon(1e-14));
  CHECK(st.first_moment[0].weight(0, 0) == doctest::Approx(0.9 * 0.05 + 0.05).epsilon(1e-14));

  const auto before = net.layers()[0].weight;
  AdamState fresh(net, {});
  adam_step(net, net.zero_gradients(), fresh);
  CHECK(net.layers()[0].weight == before);

  Gradients bad = net.zero_gradients();
  bad.layers[0].weight(0, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(adam_step(net, bad, fresh), NumericError);
  CHECK(net.layers()[0].weight == before);
  CHECK(fresh.step == 1);
}

TEST_CASE("positive transform values and floor") {
  CHECK(positive_transform(0.0) == doctest::Approx(std::log1p(std::exp(1e-5)) + 1e-3).epsilon(1e-14));
  CHECK(positive_transform(0.0) == doctest::Approx(0.69416).epsilon(1e-5));
  CHECK(positive_transform(10.0) == doctest::Approx(10.00105).epsilon(1e-6));
  CHECK(positive_transform(-1e6) == doctest::Approx(1e-3));
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 10000; ++i) CHECK(positive_transform(u(rng)) >= 1e-3);
}

TEST_CASE("softmax rows sum to one for large logits") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-50, 50);
  for (int trial = 0; trial < 200; ++trial) {
    Eigen::RowVectorXd bias(6);
    for (Eigen::Index i = 0; i < 6; ++i) bias(i) = u(rng);
    const auto net = single_layer(Eigen::MatrixXd::Zero(1, 6), bias, Activation::softmax);
    const auto y = net.predict(Eigen::MatrixXd::Zero(1, 1));
    CHECK(std::abs(y.sum() - 1.0) <= 1e-9);
    CHECK(y.minCoeff() >= 0.0);
    CHECK(y.maxCoeff() <= 1.0);
  }
}

TEST_CASE("network checkpoint round trip is exact") {
  const LayerSpec spec[] = {{7, Activation::relu}, {3, Activation::softmax}};
  const DenseNet net(5, spec, 77);
  const auto again = dense_net_from_json(nlohmann::json::parse(to_json(net).dump()));
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(4, 5);
  CHECK(again.predict(x) == net.predict(x));
  const DenseNet same_seed(5, spec, 77);
  CHECK(same_seed.predict(x) == net.predict(x));
}

TEST_CASE("z-scaler") {
  const std::vector<double> v{1, 2, 3, 4};
  const auto s = ZScaler::fit(v);
  CHECK(s.mean == 2.5);
  CHECK(s.scale == doctest::Approx(std::sqrt(1.25)));
  CHECK(s.inverse(s.forward(3.7)) == doctest::Approx(3.7));
  const std::vector<double> flat{4, 4, 4};
  const auto d = ZScaler::fit(flat);
  CHECK(d.degenerate);
  CHECK(d.scale == 1.0);
}

TEST_CASE("mini-batches cover every index once") {
  std::mt19937_64 rng(1);
  const auto batches = minibatches(37, 16, rng);
  CHECK(batches.size() == 3);
  std::vector<int> seen(37, 0);
  for (const auto& b : batches)
    for (auto i : b) ++seen[i];
  for (int c : seen) CHECK(c == 1);
}

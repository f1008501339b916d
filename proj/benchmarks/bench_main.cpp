#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "hmix/changepoint.hpp"
#include "hmix/chebyshev.hpp"
#include "hmix/dataio.hpp"
#include "hmix/gating.hpp"
#include "hmix/hierarchy.hpp"
#include "hmix/quantile.hpp"
#include "hmix/reconcile.hpp"

using namespace hmix;

namespace {

std::vector<double> noise(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0, 1);
  std::vector<double> x(n);
  for (double& v : x) v = g(rng);
  return x;
}

void BM_Dct(benchmark::State& state) {
  const auto v = noise(static_cast<std::size_t>(state.range(0)), 1);
  for (auto _ : state) benchmark::DoNotOptimize(dct_coefficients(v));
}
BENCHMARK(BM_Dct)->Arg(8)->Arg(16)->Arg(32);

void BM_QuantileCurve(benchmark::State& state) {
  QuantileConfig cfg;
  cfg.degree = static_cast<int>(state.range(0));
  const QuantileGenerator gen(cfg, nn::ZScaler{});
  const auto w = noise(cfg.window, 2);
  const std::vector<double> taus{0.05, 0.25, 0.5, 0.75, 0.95};
  for (auto _ : state) benchmark::DoNotOptimize(gen.quantiles(w, 0.0, taus));
}
BENCHMARK(BM_QuantileCurve)->Arg(16);

void BM_Reconcile(benchmark::State& state) {
  const auto h = three_level_tree();
  const Eigen::MatrixXd S = summing_matrix(h).entries;
  const auto n = S.rows();
  const auto e = noise(static_cast<std::size_t>(n * 40), 3);
  const Eigen::MatrixXd E = Eigen::Map<const Eigen::MatrixXd>(e.data(), n, 40);
  const auto plan = mint_plan(S, E, {MintKind::shr, 0.1, false});
  const Eigen::VectorXd y = Eigen::VectorXd::Ones(n);
  for (auto _ : state) benchmark::DoNotOptimize(reconcile(plan, y));
}
BENCHMARK(BM_Reconcile);

void BM_BocpdStep(benchmark::State& state) {
  const auto xs = noise(4096, 4);
  Bocpd b;
  std::size_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(b.step(xs[i++ % xs.size()]));
}
BENCHMARK(BM_BocpdStep);

void BM_GateForward(benchmark::State& state) {
  const GatingNetwork gate(16, 64, 7, nn::ZScaler{}, 5);
  const auto w = noise(16, 6);
  for (auto _ : state) benchmark::DoNotOptimize(gate.weights(std::span<const double>(w)));
}
BENCHMARK(BM_GateForward);

}  // namespace

BENCHMARK_MAIN();

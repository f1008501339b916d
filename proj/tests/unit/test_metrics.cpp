#include <cmath>
#include <numbers>
#include <random>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "hmix/error.hpp"
#include "hmix/metrics.hpp"
#include "oracles.hpp"

using namespace hmix;

namespace {

std::vector<double> normal_quantiles(const std::vector<double>& taus, double mu = 0.0, double sd = 1.0) {
  std::vector<double> q;
  for (double t : taus) q.push_back(mu + sd * oracle::normal_quantile(t));
  return q;
}

}  // namespace

TEST_CASE("MASE") {
  const std::vector<double> in{0, 1, 2, 3};
  CHECK(mase(in, std::vector<double>{4, 5}, std::vector<double>{5, 5}) == doctest::Approx(50.0));
  CHECK(mase(in, std::vector<double>{4, 5}, std::vector<double>{4, 5}) == 0.0);
  CHECK_THROWS_AS(mase(std::vector<double>{2, 2, 2}, std::vector<double>{1}, std::vector<double>{1}), DataError);
  CHECK_THROWS_AS(mase(std::vector<double>{1}, std::vector<double>{1}, std::vector<double>{1}), DataError);
  CHECK_THROWS_AS(mase(in, std::vector<double>{1, 2}, std::vector<double>{1}), DataError);
}

TEST_CASE("CRPS against the Normal closed form") {
  const auto grid = crps_grid();
  REQUIRE(grid.size() == 99);
  CHECK(grid.front() == doctest::Approx(0.01));
  CHECK(grid.back() == doctest::Approx(0.99));
  const double c = crps_from_quantiles(0.0, grid, normal_quantiles(grid));
  const double exact = (std::sqrt(2.0) - 1.0) / std::sqrt(std::numbers::pi);
  CHECK(exact == doctest::Approx(oracle::normal_crps(0.0, 0.0, 1.0)).epsilon(1e-12));
  CHECK(std::abs(c - exact) / exact <= 0.02);

  const auto fine = crps_grid(999);
  for (double y : {-1.5, 0.0, 0.4, 2.0}) {
    const double a = crps_from_quantiles(y, grid, normal_quantiles(grid, 0.3, 1.7));
    const double b = crps_from_quantiles(y, fine, normal_quantiles(fine, 0.3, 1.7));
    CHECK(std::abs(a - b) / b <= 0.01);
  }
  const double fn = crps_from_quantiles(0.0, [](double t) { return oracle::normal_quantile(t); });
  CHECK(fn == doctest::Approx(c).epsilon(1e-12));
}

TEST_CASE("CRPS properties") {
  const auto grid = crps_grid();
  CHECK(crps_from_quantiles(3.0, grid, std::vector<double>(99, 3.0)) == 0.0);
  const auto base = normal_quantiles(grid);
  double prev = crps_from_quantiles(0.0, grid, base);
  for (double shift = 1.0; shift <= 6.0; shift += 1.0) {
    auto q = base;
    for (double& v : q) v += shift;
    const double c = crps_from_quantiles(0.0, grid, q);
    CHECK(c > prev);
    prev = c;
  }
  auto bad = base;
  std::swap(bad[10], bad[11]);
  CHECK_THROWS_AS(crps_from_quantiles(0.0, grid, bad), DataError);
  CHECK_THROWS_AS(crps_from_quantiles(0.0, [](double t) { return -t; }), DataError);
  CHECK_THROWS_AS(crps_grid(0), ConfigError);
}

TEST_CASE("NRMSE") {
  const std::vector<double> y{1, 2, 3, 4, 5};
  CHECK(nrmse(y, y) == 0.0);
  CHECK(nrmse(y, std::vector<double>(5, 3.0)) == doctest::Approx(1.0));
  CHECK_THROWS_AS(nrmse(std::vector<double>{2, 2}, std::vector<double>{1, 2}), DataError);
}

TEST_CASE("metrics are non-negative on random inputs") {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> g(0, 2);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> in(20), y(5), f(5);
    for (double& v : in) v = g(rng);
    for (double& v : y) v = g(rng);
    for (double& v : f) v = g(rng);
    CHECK(mase(in, y, f) >= 0.0);
    CHECK(nrmse(y, f) >= 0.0);
    CHECK(crps_from_quantiles(g(rng), crps_grid(), normal_quantiles(crps_grid(), g(rng), 1.0)) >= 0.0);
  }
}

TEST_CASE("level aggregation") {
  EvalReport r;
  r.vertices = {{"a", 0, 10.0, 1.0, 0.5, true}, {"b", 1, 20.0, 0.0, 0.5, false}, {"c", 1, 40.0, 0.0, 0.5, false}};
  const auto levels = r.levels();
  REQUIRE(levels.size() == 2);
  CHECK(levels[1].count == 2);
  CHECK(levels[1].mase_mean == doctest::Approx(30.0));
  CHECK(levels[1].mase_sd == doctest::Approx(10.0));
  CHECK(levels[0].has_crps);
  CHECK_FALSE(levels[1].has_crps);
  CHECK(r.mean_mase() == doctest::Approx(70.0 / 3.0));
  const auto j = to_json(r);
  CHECK(j.at("vertices").size() == 3);
  const auto [m, s] = mean_sd(std::vector<double>{1, 3});
  CHECK(m == 2.0);
  CHECK(s == 1.0);
}

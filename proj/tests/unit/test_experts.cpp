#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "hmix/dataio.hpp"
#include "hmix/error.hpp"
#include "hmix/experts.hpp"

using namespace hmix;

namespace {

std::vector<double> geometric(std::size_t n, double c, double x0) {
  std::vector<double> x(n);
  x[0] = x0;
  for (std::size_t t = 1; t < n; ++t) x[t] = c * x[t - 1];
  return x;
}

std::vector<std::unique_ptr<Expert>> fitted_roster(const std::vector<double>& x, std::uint64_t seed) {
  std::vector<std::unique_ptr<Expert>> out;
  for (auto spec : default_roster(12, 16, seed)) {
    if (spec.kind == ExpertKind::window_net) spec.epochs = 30;
    auto e = make_expert(spec);
    e->fit(x);
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace

TEST_CASE("ar_ls(1) recovers the coefficient of a noiseless AR(1)") {
  // Slow decay keeps the lagged design well conditioned.
  const auto x = geometric(50, 0.5, 1.0);
  ArExpert ar(1);
  ar.fit(x);
  CHECK(ar.coefficients()[0] == doctest::Approx(0.5).epsilon(1e-8));
  CHECK(std::abs(ar.intercept()) < 1e-8);
}

TEST_CASE("ar_ls closed-form forecasts") {
  const auto ar = ArExpert::with_coefficients({0.5});
  const std::vector<double> x{3, 1, 8};
  CHECK(forecast_recursive(ar, x, 3) == std::vector<double>{4, 2, 1});
  const std::vector<double> series{2, 6, 4, 10, 8};
  const auto roll = rolling_forecasts(ar, series, 1, 4);
  REQUIRE(roll.size() == 4);
  for (std::size_t j = 1; j <= 4; ++j) CHECK(roll[j - 1] == 0.5 * series[j - 1]);
  CHECK(rolling_forecasts(ar, series, 3, 3).size() == 1);
  const std::vector<double> prefix(series.begin(), series.begin() + 4);
  CHECK(forecast_recursive(ar, prefix, 1)[0] == rolling_forecasts(ar, series, 4, 4)[0]);
}

TEST_CASE("rank-deficient AR design falls back to ridge") {
  const std::vector<double> flat(20, 3.0);
  ArExpert ar(2);
  ar.fit(flat);
  CHECK(ar.ridge_used());
  CHECK(ar.predict_next(flat) == doctest::Approx(3.0).epsilon(1e-6));
}

TEST_CASE("seasonal naive stores and repeats the season") {
  std::vector<double> x;
  for (int k = 0; k < 6; ++k)
    for (double v : {1.0, 5.0, 2.0, 7.0}) x.push_back(v);
  SeasonalNaiveExpert sn(4);
  sn.fit(x);
  CHECK(sn.last_season() == std::vector<double>{1, 5, 2, 7});
  const auto roll = rolling_forecasts(sn, x, 4, x.size() - 1);
  for (std::size_t j = 4; j < x.size(); ++j) CHECK(roll[j - 4] == x[j]);
}

TEST_CASE("every expert is exact on a constant series") {
  const std::vector<double> c(60, 4.25);
  for (const auto& e : fitted_roster(c, 3)) {
    CAPTURE(e->name());
    CHECK(e->predict_next(c) == doctest::Approx(4.25).epsilon(1e-6));
  }
  MovingAverageExpert ma(8);
  ma.fit(c);
  for (double v : forecast_recursive(ma, c, 5)) CHECK(v == 4.25);
}

TEST_CASE("moving average uses the shorter history when needed") {
  MovingAverageExpert ma(8);
  const std::vector<double> x{1, 2, 3};
  ma.fit(x);
  CHECK(ma.predict_next(x) == 2.0);
}

TEST_CASE("exponential smoothing grid search") {
  std::vector<double> x(80);
  for (std::size_t t = 0; t < x.size(); ++t) x[t] = 2.0 + 0.5 * static_cast<double>(t);
  ExpSmoothExpert holt(true);
  holt.fit(x);
  CHECK(holt.predict_next(x) == doctest::Approx(2.0 + 0.5 * 80));

  // Two points leave every constant pair with zero in-sample error; ties go to the smallest.
  ExpSmoothExpert tie(true);
  tie.fit(std::vector<double>{1.0, 4.0});
  CHECK(tie.alpha() == doctest::Approx(0.05));
  CHECK(tie.beta() == doctest::Approx(0.05));
  ExpSmoothExpert tie_simple(false);
  tie_simple.fit(std::vector<double>{1.0, 4.0});
  CHECK(tie_simple.alpha() == doctest::Approx(0.05));

  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0, 1);
  std::vector<double> walk{0.0};
  for (int i = 0; i < 200; ++i) walk.push_back(walk.back() + g(rng));
  ExpSmoothExpert ses(false);
  ses.fit(walk);
  double best = std::numeric_limits<double>::infinity();
  for (int a = 1; a <= 19; ++a) best = std::min(best, ExpSmoothExpert::one_step_sse(walk, false, 0.05 * a, 0.0));
  CHECK(ExpSmoothExpert::one_step_sse(walk, false, ses.alpha(), 0.0) == best);
  CHECK(ses.alpha() > 0.5);  // a random walk favours heavy updating
}

TEST_CASE("fit and predict preconditions") {
  ArExpert ar(4);
  const std::vector<double> shorty{1, 2, 3, 4};
  CHECK_THROWS_AS(ar.predict_next(shorty), ConfigError);
  CHECK_THROWS_AS(ar.fit(shorty), DataError);
  SeasonalNaiveExpert sn(12);
  CHECK_THROWS_AS(sn.fit(std::vector<double>(12, 1.0)), DataError);
  ExpertSpec spec;
  spec.kind = ExpertKind::window_net;
  spec.window = 5;
  CHECK_THROWS_AS(make_expert(spec)->fit(std::vector<double>(5, 1.0)), DataError);
  CHECK_THROWS_AS(ExpSmoothExpert(true).fit(std::vector<double>{1.0}), DataError);

  const auto fitted = ArExpert::with_coefficients({0.5});
  const std::vector<double> x{1, 2, 3};
  CHECK_THROWS_AS(rolling_forecasts(fitted, x, 1, 3), DataError);
  CHECK_THROWS_AS(rolling_forecasts(fitted, x, 2, 1), DataError);
  CHECK_THROWS_AS(rolling_forecasts(fitted, x, 0, 1), DataError);
  CHECK_THROWS_AS(forecast_recursive(fitted, x, 0), DataError);
}

TEST_CASE("rolling forecasts never read the future") {
  const auto h = three_level_tree();
  const auto panel = simulate_hierarchical(h, 120, 9);
  const auto& x = panel.values[0];
  for (const auto& e : fitted_roster(std::vector<double>(x.begin(), x.begin() + 70), 1)) {
    const auto base = rolling_forecasts(*e, x, 70, 110);
    for (std::size_t j : {75u, 90u, 105u}) {
      auto perturbed = x;
      for (std::size_t k = j; k < perturbed.size(); ++k) perturbed[k] += 1000.0;
      const auto alt = rolling_forecasts(*e, perturbed, 70, 110);
      for (std::size_t i = 70; i <= j; ++i) CHECK(alt[i - 70] == base[i - 70]);
    }
  }
}

TEST_CASE("window_net fits are deterministic per seed") {
  const auto panel = simulate_hierarchical(three_level_tree(), 150, 2);
  const auto& x = panel.values[3];
  ExpertSpec spec;
  spec.kind = ExpertKind::window_net;
  spec.window = 8;
  spec.epochs = 20;
  spec.seed = 42;
  auto a = make_expert(spec);
  auto b = make_expert(spec);
  a->fit(x);
  b->fit(x);
  CHECK(a->predict_next(x) == b->predict_next(x));
  spec.seed = 43;
  auto c = make_expert(spec);
  c->fit(x);
  CHECK(c->predict_next(x) != a->predict_next(x));
}

TEST_CASE("all experts run on every synthetic benchmark series") {
  const auto h = three_level_tree();
  const auto panel = simulate_hierarchical(h, 200, 4);
  for (const auto& series : panel.values) {
    for (const auto& e : fitted_roster(std::vector<double>(series.begin(), series.begin() + 120), 8)) {
      for (double v : rolling_forecasts(*e, series, 120, 199)) CHECK(std::isfinite(v));
      for (double v : forecast_recursive(*e, series, 10)) CHECK(std::isfinite(v));
    }
  }
  const auto pw = simulate_piecewise(400, 0.2, 1);
  for (const auto& e : fitted_roster(std::vector<double>(pw.y.begin(), pw.y.begin() + 300), 2)) {
    for (double v : rolling_forecasts(*e, pw.y, 300, 399)) CHECK(std::isfinite(v));
  }
}

TEST_CASE("expert checkpoints round trip") {
  const auto panel = simulate_hierarchical(three_level_tree(), 120, 6);
  const auto& x = panel.values[1];
  for (const auto& e : fitted_roster(x, 4)) {
    const auto back = expert_from_json(nlohmann::json::parse(e->to_json().dump()));
    CHECK(back->name() == e->name());
    CHECK(back->predict_next(x) == e->predict_next(x));
    CHECK(back->fit_end() == e->fit_end());
  }
  for (const auto& spec : default_roster(7, 5, 11)) {
    const auto again = expert_spec_from_json(to_json(spec));
    CHECK(to_json(again) == to_json(spec));
  }
  CHECK_THROWS_AS(expert_kind_from_string("prophet"), ConfigError);
}

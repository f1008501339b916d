#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "hmix/changepoint.hpp"
#include "hmix/error.hpp"
#include "hmix/experts.hpp"
#include "oracles.hpp"

using namespace hmix;

namespace {

double total(const std::vector<double>& p) { return std::accumulate(p.begin(), p.end(), 0.0); }

MixtureForecaster two_mean_experts(std::size_t window, const std::vector<double>& train, std::uint64_t seed) {
  MovingAverageExpert fast(2), slow(50);
  fast.fit(train);
  slow.fit(train);
  MixtureForecaster f;
  f.experts = {std::make_shared<MovingAverageExpert>(fast), std::make_shared<MovingAverageExpert>(slow)};
  f.gate = GatingNetwork(window, 8, 2, nn::ZScaler::fit(train), seed);
  return f;
}

}  // namespace

TEST_CASE("predictive density") {
  CHECK(upm_predictive(1.5, 1.5, 0.5, 0.5) == doctest::Approx(1.0 / std::sqrt(2.0 * std::numbers::pi)));
  CHECK(upm_predictive(2.0, 1.0, 0.3, 1.0) == doctest::Approx(upm_predictive(0.0, 1.0, 0.3, 1.0)));
  CHECK(upm_predictive(0, 0, 1.0, 1.0) == doctest::Approx(upm_predictive(0, 0, 0.5, 0.5) / std::sqrt(2.0)));
  CHECK(std::log(upm_predictive(0.7, 0.1, 2.0, 1.0)) == doctest::Approx(upm_log_predictive(0.7, 0.1, 2.0, 1.0)));
  CHECK_THROWS_AS(upm_predictive(0, 0, 0.0, 1.0), ConfigError);
  CHECK_THROWS_AS(upm_predictive(0, 0, 1.0, -1.0), ConfigError);
}

TEST_CASE("conjugate update") {
  const auto [mu, var] = posterior_update(0.0, 2.0, 1.0, 1.0);
  CHECK(mu == doctest::Approx(2.0 / 3.0));
  CHECK(var == doctest::Approx(2.0 / 3.0));
  const auto [m2, v2] = posterior_update(1.3, 0.4, 1.3, 1.0);
  CHECK(m2 == doctest::Approx(1.3));
  CHECK(v2 < 0.4);

  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(5.0, 1.0);
  std::vector<double> xs(100);
  for (double& x : xs) x = g(rng);
  double m = 0.0, v = 2.0;
  for (double x : xs) std::tie(m, v) = posterior_update(m, v, x, 1.0);
  const auto [bm, bv] = oracle::batch_posterior(0.0, 2.0, 1.0, xs);
  CHECK(m == doctest::Approx(bm).epsilon(1e-10));
  CHECK(v == doctest::Approx(bv).epsilon(1e-10));
  CHECK(v == doctest::Approx(1.0 / 100.0).epsilon(0.05));

  double c = 0.0, vc = 2.0;
  for (int i = 0; i < 100; ++i) std::tie(c, vc) = posterior_update(c, vc, 3.0, 1.0);
  CHECK(c == doctest::Approx(3.0).epsilon(0.05));
}

TEST_CASE("first step and normalisation") {
  Bocpd b;
  const auto s = b.step(0.2);
  CHECK(s.map_run_length == 1);
  CHECK_FALSE(s.detected);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0, 1);
  for (int i = 0; i < 1000; ++i) {
    b.step(g(rng));
    const auto p = b.posterior();
    CHECK(std::abs(total(p) - 1.0) <= 1e-9);
    CHECK(p.size() <= 501);
  }
  CHECK(b.means()[0] == 0.0);
  CHECK(b.variances()[0] == 2.0);
  for (std::size_t l = 1; l < b.variances().size(); ++l) CHECK(b.variances()[l] < b.variances()[l - 1]);
  CHECK_THROWS_AS(b.step(std::nan("")), DataError);
  CHECK_THROWS_AS(Bocpd(BocpdConfig{.hazard = 0.0}), ConfigError);
}

TEST_CASE("log space agrees with linear space") {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> g(0, 1);
  Bocpd lin;
  Bocpd lg(BocpdConfig{.log_space = true});
  for (int i = 0; i < 1000; ++i) {
    const double x = g(rng) + (i > 600 ? 2.5 : 0.0);
    const auto a = lin.step(x);
    const auto b = lg.step(x);
    CHECK(a.map_run_length == b.map_run_length);
    const auto pa = lin.posterior(), pb = lg.posterior();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t l = 0; l < pa.size(); ++l) {
      if (pa[l] > 1e-300) CHECK(std::abs(pa[l] - pb[l]) <= 1e-8 * std::max(pa[l], 1e-12) + 1e-300);
    }
  }
}

TEST_CASE("underflow falls back to log space") {
  Bocpd b(BocpdConfig{.obs_var = 1e-4});
  b.step(0.0);
  const auto s = b.step(1e3);
  CHECK(s.log_fallback);
  CHECK(std::abs(total(b.posterior()) - 1.0) <= 1e-9);
}

TEST_CASE("mean shift is detected quickly") {
  int hits = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto xs = oracle::mean_shift_stream(seed, 1000, 500, 3.0, 1.0);
    Bocpd b;
    bool found = false;
    for (std::size_t t = 0; t < xs.size(); ++t) {
      const auto s = b.step(xs[t]);
      // the run the MAP points at must start within 10 steps of the jump
      if (t >= 500 && t <= 510 && s.map_run_length <= t - 489) found = true;
    }
    hits += found;
  }
  CHECK(hits >= 19);
}

TEST_CASE("hazard raises the change mass on iid data") {
  std::vector<double> mass;
  for (double h : {1e-4, 1e-3, 1e-2}) {
    std::mt19937_64 rng(77);
    std::normal_distribution<double> g(0, 1);
    Bocpd b(BocpdConfig{.hazard = h});
    double acc = 0.0;
    for (int i = 0; i < 800; ++i) {
      b.step(g(rng));
      if (i >= 400) acc += b.posterior()[0];
    }
    mass.push_back(acc);
  }
  CHECK(mass[0] < mass[1]);
  CHECK(mass[1] < mass[2]);
}

TEST_CASE("shrinkage blend") {
  ShrinkageState s;
  const std::vector<double> g{1.0, 0.0};
  CHECK(shrink_weights(g, s) == g);
  s.trigger();
  CHECK(shrink_weights(g, s)[0] == doctest::Approx(0.5));
  s.steps = 2.0;
  const auto w = shrink_weights(g, s);
  CHECK(w[0] == doctest::Approx(1.0 - std::exp(-1.0) + std::exp(-1.0) / 2).epsilon(1e-12));
  CHECK(w[1] == doctest::Approx(std::exp(-1.0) / 2).epsilon(1e-12));
  CHECK(w[0] + w[1] == doctest::Approx(1.0).epsilon(1e-15));
  s.trigger();
  int active = 0;
  while (s.active()) {
    s.advance();
    ++active;
  }
  // exp(-N/2) < 0.1 first at N = 5
  CHECK(active == 5);
  CHECK(s.blend() == 0.0);
  ShrinkageState bad;
  bad.beta0 = 1.5;
  bad.trigger();
  CHECK_THROWS_AS(shrink_weights(g, bad), ConfigError);

  std::mt19937_64 rng(3);
  std::gamma_distribution<double> ga(1.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 6.0);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> v(4);
    for (double& x : v) x = ga(rng);
    const double z = total(v);
    for (double& x : v) x /= z;
    ShrinkageState r{0.7, 2.0};
    r.steps = u(rng);
    const auto o = shrink_weights(v, r);
    CHECK(std::abs(total(o) - 1.0) < 1e-12);
    for (double x : o) CHECK(x >= 0.0);
  }
}

TEST_CASE("online loop without changes keeps shrinkage off") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0, 0.3);
  std::vector<double> x(400);
  for (double& v : x) v = 2.0 + g(rng);
  auto a = two_mean_experts(8, x, 1);
  auto b = two_mean_experts(8, x, 1);
  OnlineConfig with;
  OnlineConfig without;
  without.mitigation = false;
  const auto ra = online_loop(a, nullptr, x, 100, with);
  const auto rb = online_loop(b, nullptr, x, 100, without);
  REQUIRE(ra.size() == 300);
  for (std::size_t i = 0; i < ra.size(); ++i) {
    CHECK_FALSE(ra[i].detected);
    CHECK(ra[i].yhat == rb[i].yhat);
    CHECK(ra[i].residual == doctest::Approx(ra[i].y - ra[i].yhat));
  }
}

TEST_CASE("online loop resets weights after a jump") {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> g(0, 0.3);
  std::vector<double> x(500);
  for (std::size_t t = 0; t < x.size(); ++t) x[t] = (t < 300 ? 0.0 : 8.0) + g(rng);
  auto f = two_mean_experts(8, std::vector<double>(x.begin(), x.begin() + 300), 2);
  OnlineConfig cfg;
  cfg.bocpd.obs_var = 0.3 * 0.3 * 4;
  const auto recs = online_loop(f, nullptr, x, 100, cfg);
  bool reset = false;
  for (const auto& r : recs) {
    if (r.detected && r.t >= 300 && r.t <= 310) reset = true;
    CHECK(std::abs(total(r.weights) - 1.0) < 1e-9);
  }
  CHECK(reset);
  auto idx = std::find_if(recs.begin(), recs.end(), [](const OnlineRecord& r) { return r.detected && r.t >= 300; });
  REQUIRE(idx != recs.end());
  // the step after detection predicts with uniform weights
  REQUIRE(idx + 1 != recs.end());
  CHECK((idx + 1)->weights[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK_THROWS_AS(online_loop(f, nullptr, x, 3, cfg), DataError);
}

TEST_CASE("online config round trip") {
  OnlineConfig c;
  c.beta0 = 0.5;
  c.bocpd.rule = DetectionRule::map_is_one;
  c.taus = {0.1, 0.9};
  const auto back = online_config_from_json(to_json(c));
  CHECK(back.beta0 == 0.5);
  CHECK(back.bocpd.rule == DetectionRule::map_is_one);
  CHECK(back.taus == c.taus);
  CHECK_THROWS_AS(online_config_from_json(nlohmann::json{{"beta0", 2.0}}), ConfigError);
  CHECK_THROWS_AS(detection_rule_from_string("never"), ConfigError);
}

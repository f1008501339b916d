#include <random>

#include "doctest.h"
#include "hmix/dataio.hpp"
#include "hmix/error.hpp"
#include "hmix/hierarchy.hpp"
#include "hmix/reconcile.hpp"
#include "oracles.hpp"

using namespace hmix;

namespace {

Eigen::MatrixXd small_S() {
  Eigen::MatrixXd S(3, 2);
  S << 1, 1, 1, 0, 0, 1;
  return S;
}

Eigen::MatrixXd random_errors(std::mt19937_64& rng, Eigen::Index n, Eigen::Index N) {
  std::normal_distribution<double> g(0, 1);
  Eigen::MatrixXd E(n, N);
  for (Eigen::Index i = 0; i < E.size(); ++i) E.data()[i] = g(rng);
  // correlated rows so the shrinkage target matters
  for (Eigen::Index r = 1; r < n; ++r) E.row(r) += 0.5 * E.row(r - 1);
  return E;
}

}  // namespace

TEST_CASE("ols hand example") {
  const auto plan = ols_plan(small_S());
  Eigen::MatrixXd P(2, 3);
  P << 1, 2, -1, 1, -1, 2;
  P /= 3.0;
  CHECK((plan.P - P).cwiseAbs().maxCoeff() <= 1e-12);
  Eigen::VectorXd y(3);
  y << 10, 4, 7;
  const auto r = reconcile(plan, y);
  // P y = (1/3) [11, 20]; S P y = [31/3, 11/3, 20/3]
  CHECK(r(0) == doctest::Approx(31.0 / 3.0));
  CHECK(r(1) == doctest::Approx(11.0 / 3.0));
  CHECK(r(2) == doctest::Approx(20.0 / 3.0));
  const auto r2 = reconcile(plan, Eigen::VectorXd(2.0 * y));
  CHECK((r2 - 2.0 * r).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("bottom-up plan") {
  const auto h = three_level_tree();
  const auto S = summing_matrix(h).entries;
  const auto plan = bu_plan(S);
  Eigen::VectorXd y = Eigen::VectorXd::Constant(S.rows(), 99.0);
  y.tail(4) << 1, 2, 3, 4;
  const auto r = reconcile(plan, y);
  CHECK(r(h.root()) == doctest::Approx(10.0));
  CHECK(coherent_loss(h, Eigen::MatrixXd(r)) < 1e-12);
  Eigen::VectorXd b(4);
  b << 0.5, -1, 2, 7;
  const Eigen::VectorXd coherent = S * b;
  CHECK((reconcile(plan, coherent) - coherent).cwiseAbs().maxCoeff() < 1e-12);
  Eigen::MatrixXd one(1, 1);
  one << 1;
  CHECK(bu_plan(one).P(0, 0) == 1.0);
}

TEST_CASE("unbiasedness and coherence on random trees") {
  std::mt19937_64 rng(42);
  std::normal_distribution<double> g(0, 3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto edges = oracle::random_tree(rng, 3, 6, true);
    const auto h = build_hierarchy(edges);
    const auto S = summing_matrix(h).entries;
    const auto n = S.rows();
    std::vector<ReconciliationPlan> plans{ols_plan(S)};
    const auto E = random_errors(rng, n, n + 12);
    for (auto kind : {MintKind::sam, MintKind::shr, MintKind::ols}) plans.push_back(mint_plan(S, E, {kind, 0.1, false}));
    plans.push_back(mint_plan(S, E, {MintKind::shr, 0.1, true}));
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) y(i) = g(rng);
    for (const auto& p : plans) {
      CHECK((S * p.P * S - S).cwiseAbs().maxCoeff() <= 1e-8);
      const auto r = reconcile(p, y);
      CHECK(coherent_loss(h, Eigen::MatrixXd(r)) <= 1e-8);
      CHECK((reconcile(p, r) - r).cwiseAbs().maxCoeff() <= 1e-10);
    }
  }
}

TEST_CASE("mint reductions") {
  const auto S = small_S();
  std::mt19937_64 rng(3);
  const auto E = random_errors(rng, 3, 40);
  const auto ols = ols_plan(S);
  const auto m = mint_plan(S, E, {MintKind::ols, 0.1, false});
  CHECK((m.P - ols.P).cwiseAbs().maxCoeff() <= 1e-12);

  // alpha = 1 keeps only the per-series variances
  const auto diag = mint_plan(S, E, {MintKind::shr, 1.0, false});
  CHECK((diag.W - Eigen::MatrixXd(diag.W.diagonal().asDiagonal())).cwiseAbs().maxCoeff() < 1e-14);
  // errors are taken as zero-mean, so the variances are raw second moments
  const Eigen::VectorXd var = E.rowwise().squaredNorm() / static_cast<double>(E.cols());
  CHECK((diag.W.diagonal() - var).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("weighted least squares hand case") {
  const auto S = small_S();
  Eigen::MatrixXd W = Eigen::Vector3d(4, 1, 1).asDiagonal();
  const auto plan = mint_plan_with_covariance(S, W);
  // (S' W^-1 S)^-1 S' W^-1 with W^-1 = diag(1/4, 1, 1): Gram = [[5/4, 1/4], [1/4, 5/4]]
  Eigen::MatrixXd P(2, 3);
  P << 1.0 / 6.0, 5.0 / 6.0, -1.0 / 6.0, 1.0 / 6.0, -1.0 / 6.0, 5.0 / 6.0;
  CHECK((plan.P - P).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("mint error paths") {
  const auto S = small_S();
  std::mt19937_64 rng(1);
  const auto few = random_errors(rng, 3, 3);
  CHECK_THROWS_AS(mint_plan(S, few, {MintKind::sam, 0.1, false}), NumericError);
  try {
    mint_plan(S, few, {MintKind::sam, 0.1, false});
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("mint_shr") != std::string::npos);
  }
  CHECK_NOTHROW(mint_plan(S, few, {MintKind::shr, 0.1, false}));
  CHECK_THROWS_AS(mint_plan(S, few, {MintKind::shr, 0.0, false}), ConfigError);
  Eigen::MatrixXd bad(3, 3);
  bad << 1, 2, 0, 2, 1, 0, 0, 0, 1;
  CHECK_THROWS_AS(mint_plan_with_covariance(S, bad), NumericError);
  Eigen::MatrixXd asym = Eigen::Matrix3d::Identity();
  asym(0, 1) = 0.5;
  CHECK_THROWS_AS(mint_plan_with_covariance(S, asym), NumericError);
  CHECK_THROWS_AS(mint_plan_with_covariance(S, Eigen::Matrix3d::Zero()), NumericError);
  CHECK_THROWS_AS(reconcile(ols_plan(S), Eigen::VectorXd(Eigen::Vector2d(1, 2))), DataError);
  CHECK_THROWS_AS(reconcile_method_from_string("magic"), ConfigError);
  CHECK(reconcile_method_from_string("mint_shr") == ReconcileMethod::mint_shr);
}

TEST_CASE("empirical risk minimisation") {
  Eigen::MatrixXd one(1, 1);
  one << 1;
  Eigen::MatrixXd yhat(1, 1), y(1, 1);
  yhat << 4;
  y << 3;
  CHECK(erm_plan(one, yhat, y).P(0, 0) == doctest::Approx(0.75).epsilon(1e-8));

  const auto S = small_S();
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g(0, 1);
  Eigen::MatrixXd b(2, 60);
  for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = g(rng);
  const Eigen::MatrixXd truth = S * b;
  const auto exact = erm_plan(S, truth, truth);
  CHECK((S * exact.P * truth - truth).cwiseAbs().maxCoeff() <= 1e-8);

  Eigen::MatrixXd base = truth;
  for (Eigen::Index i = 0; i < base.size(); ++i) base.data()[i] += 0.7 * g(rng);
  const auto erm = erm_plan(S, base, truth);
  const auto ols = ols_plan(S);
  const auto risk = [&](const Eigen::MatrixXd& P) { return (truth - S * P * base).squaredNorm(); };
  CHECK(risk(erm.P) <= risk(ols.P) + 1e-9);
  CHECK_THROWS_AS(erm_plan(S, base, truth.leftCols(10)), DataError);
}

TEST_CASE("shrinkage intensity lies in the unit interval") {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 20; ++i) {
    const auto E = random_errors(rng, 4, 30);
    const double a = shrinkage_intensity(E);
    CHECK(a >= 0.0);
    CHECK(a <= 1.0);
  }
}

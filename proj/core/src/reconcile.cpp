#include "hmix/reconcile.hpp"

#include <algorithm>
#include <cmath>

#include "hmix/error.hpp"

namespace hmix {

const char* to_string(ReconcileMethod m) {
  switch (m) {
    case ReconcileMethod::bu: return "bu";
    case ReconcileMethod::ols: return "ols";
    case ReconcileMethod::mint_sam: return "mint_sam";
    case ReconcileMethod::mint_shr: return "mint_shr";
    case ReconcileMethod::mint_ols: return "mint_ols";
    case ReconcileMethod::erm: return "erm";
  }
  return "bu";
}

ReconcileMethod reconcile_method_from_string(const std::string& name) {
  for (auto m : {ReconcileMethod::bu, ReconcileMethod::ols, ReconcileMethod::mint_sam, ReconcileMethod::mint_shr,
                 ReconcileMethod::mint_ols, ReconcileMethod::erm}) {
    if (name == to_string(m)) return m;
  }
  throw ConfigError("unknown reconciliation method '" + name + "'");
}

namespace {

void check_summing(const Eigen::MatrixXd& S) {
  if (S.rows() == 0 || S.cols() == 0 || S.rows() < S.cols()) throw DataError("malformed summing matrix");
}

Eigen::MatrixXd inverse_checked(const Eigen::MatrixXd& A, const char* what) {
  Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
  if (!lu.isInvertible()) throw NumericError(std::string(what) + " is singular");
  // Partial pivoting for the solve itself.
  return A.partialPivLu().inverse();
}

}  // namespace

ReconciliationPlan bu_plan(const Eigen::MatrixXd& S) {
  check_summing(S);
  ReconciliationPlan plan;
  plan.method = ReconcileMethod::bu;
  plan.S = S;
  const auto m = S.cols();
  plan.P = Eigen::MatrixXd::Zero(m, S.rows());
  plan.P.rightCols(m).setIdentity();
  return plan;
}

ReconciliationPlan ols_plan(const Eigen::MatrixXd& S) {
  check_summing(S);
  ReconciliationPlan plan;
  plan.method = ReconcileMethod::ols;
  plan.S = S;
  plan.P = inverse_checked(S.transpose() * S, "S'S") * S.transpose();
  return plan;
}

ReconciliationPlan mint_plan_with_covariance(const Eigen::MatrixXd& S, const Eigen::MatrixXd& W) {
  check_summing(S);
  if (W.rows() != S.rows() || W.cols() != S.rows()) throw DataError("covariance size differs from the hierarchy");
  if (!W.isApprox(W.transpose(), 1e-10)) throw NumericError("error covariance is not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(W, Eigen::EigenvaluesOnly);
  const double top = std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
  if (eig.eigenvalues().minCoeff() < -1e-10 * top) throw NumericError("error covariance is not positive semidefinite");
  if (eig.eigenvalues().minCoeff() <= 1e-12 * top) {
    throw NumericError("error covariance is singular; use the shrinkage estimator (mint_shr)");
  }
  const Eigen::MatrixXd Winv = inverse_checked(W, "error covariance");
  ReconciliationPlan plan;
  plan.S = S;
  plan.W = W;
  plan.P = inverse_checked(S.transpose() * Winv * S, "S'W^-1 S") * S.transpose() * Winv;
  return plan;
}

double shrinkage_intensity(const Eigen::MatrixXd& errors) {
  // Intensity toward the diagonal target computed on standardized errors.
  const auto n = errors.rows();
  const auto N = errors.cols();
  if (N < 2) throw DataError("shrinkage estimation needs at least two error vectors");
  const Eigen::VectorXd mean = errors.rowwise().mean();
  const Eigen::MatrixXd centered = errors.colwise() - mean;
  Eigen::VectorXd sd = (centered.array().square().rowwise().sum() / static_cast<double>(N)).sqrt();
  for (Eigen::Index i = 0; i < n; ++i)
    if (sd(i) <= 0.0) sd(i) = 1.0;
  const Eigen::MatrixXd z = sd.cwiseInverse().asDiagonal() * centered;
  const double Nd = static_cast<double>(N);
  double num = 0.0;
  double den = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      const Eigen::ArrayXd w = z.row(i).array() * z.row(j).array();
      const double r = w.mean();
      const double var_r = Nd / std::pow(Nd - 1.0, 3) * (w - w.mean()).square().sum();
      num += var_r;
      den += r * r;
    }
  }
  if (den <= 0.0) return 1.0;
  return std::clamp(num / den, 0.0, 1.0);
}

ReconciliationPlan mint_plan(const Eigen::MatrixXd& S, const Eigen::MatrixXd& errors, const MintOptions& opts) {
  check_summing(S);
  const auto n = S.rows();
  if (opts.kind == MintKind::ols) {
    auto plan = mint_plan_with_covariance(S, Eigen::MatrixXd::Identity(n, n));
    plan.method = ReconcileMethod::mint_ols;
    return plan;
  }
  if (errors.rows() != n) throw DataError("error matrix rows differ from the hierarchy size");
  for (Eigen::Index i = 0; i < errors.size(); ++i)
    if (!std::isfinite(errors.data()[i])) throw DataError("non-finite forecast error");
  const auto N = errors.cols();
  if (opts.kind == MintKind::sam && N < n + 1) {
    throw NumericError("sample covariance needs at least " + std::to_string(n + 1) + " error vectors, got " +
                       std::to_string(N) + "; use the shrinkage estimator (mint_shr)");
  }
  if (N < 1) throw DataError("no forecast errors supplied");
  const Eigen::MatrixXd Ws = errors * errors.transpose() / static_cast<double>(N);
  Eigen::MatrixXd W = Ws;
  double alpha = 0.0;
  if (opts.kind == MintKind::shr) {
    alpha = opts.estimate_alpha ? shrinkage_intensity(errors) : opts.alpha;
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("shrinkage intensity must lie in (0, 1]");
    const Eigen::MatrixXd Wd = Eigen::MatrixXd(Ws.diagonal().asDiagonal());
    W = (1.0 - alpha) * Ws + alpha * Wd;
  }
  auto plan = mint_plan_with_covariance(S, W);
  plan.method = opts.kind == MintKind::sam ? ReconcileMethod::mint_sam : ReconcileMethod::mint_shr;
  plan.shrinkage = alpha;
  return plan;
}

ReconciliationPlan erm_plan(const Eigen::MatrixXd& S, const Eigen::MatrixXd& base, const Eigen::MatrixXd& truth) {
  check_summing(S);
  const auto n = S.rows();
  if (base.rows() != n || truth.rows() != n || base.cols() != truth.cols() || base.cols() == 0) {
    throw DataError("erm needs n x N base forecasts and truths of equal shape");
  }
  // min_P ||Y - S P Yhat||_F^2  =>  P = (S'S)^-1 S' Y Yhat' (Yhat Yhat')^-1
  const Eigen::MatrixXd gram = base * base.transpose();
  Eigen::MatrixXd ridged = gram;
  ridged.diagonal().array() += 1e-8;
  const Eigen::MatrixXd left = inverse_checked(S.transpose() * S, "S'S") * S.transpose() * truth * base.transpose();
  ReconciliationPlan plan;
  plan.method = ReconcileMethod::erm;
  plan.S = S;
  plan.P = ridged.partialPivLu().solve(left.transpose()).transpose();
  Eigen::FullPivLU<Eigen::MatrixXd> lu(gram);
  lu.setThreshold(1e-10);
  plan.ridge_applied = lu.rank() < gram.rows();
  return plan;
}

Eigen::VectorXd reconcile(const ReconciliationPlan& plan, const Eigen::VectorXd& base) {
  if (base.size() != plan.S.rows()) throw DataError("base forecast length differs from the hierarchy size");
  return plan.S * (plan.P * base);
}

Eigen::MatrixXd reconcile(const ReconciliationPlan& plan, const Eigen::MatrixXd& base) {
  if (base.rows() != plan.S.rows()) throw DataError("base forecast rows differ from the hierarchy size");
  return plan.S * (plan.P * base);
}

}  // namespace hmix

#pragma once

#include <string>

#include <Eigen/Dense>

#include "hmix/hierarchy.hpp"

namespace hmix {

enum class ReconcileMethod { bu, ols, mint_sam, mint_shr, mint_ols, erm };

const char* to_string(ReconcileMethod m);
ReconcileMethod reconcile_method_from_string(const std::string& name);

enum class MintKind { sam, shr, ols };

/// y_tilde = S P y_hat.
struct ReconciliationPlan {
  ReconcileMethod method = ReconcileMethod::bu;
  Eigen::MatrixXd S;  // n x m
  Eigen::MatrixXd P;  // m x n
  Eigen::MatrixXd W;  // error covariance used by mint; empty otherwise
  double shrinkage = 0.0;
  /// erm only: the 1e-8 ridge changed the solution noticeably.
  bool ridge_applied = false;
};

ReconciliationPlan bu_plan(const Eigen::MatrixXd& S);
ReconciliationPlan ols_plan(const Eigen::MatrixXd& S);

struct MintOptions {
  MintKind kind = MintKind::shr;
  double alpha = 0.1;
  /// Estimate alpha from the data (Schafer-Strimmer intensity on correlations).
  bool estimate_alpha = false;
};

/// `errors` holds one-step base forecast errors, one column per time step (n x N).
ReconciliationPlan mint_plan(const Eigen::MatrixXd& S, const Eigen::MatrixXd& errors, const MintOptions& opts);
/// MinT with an explicit error covariance.
ReconciliationPlan mint_plan_with_covariance(const Eigen::MatrixXd& S, const Eigen::MatrixXd& W);

/// Least-squares P on base forecasts and truths (both n x N).
ReconciliationPlan erm_plan(const Eigen::MatrixXd& S, const Eigen::MatrixXd& base, const Eigen::MatrixXd& truth);

/// Data-driven shrinkage intensity for the diagonal target.
double shrinkage_intensity(const Eigen::MatrixXd& errors);

/// S P y_hat for a vector or for columns of an n x H matrix.
Eigen::VectorXd reconcile(const ReconciliationPlan& plan, const Eigen::VectorXd& base);
Eigen::MatrixXd reconcile(const ReconciliationPlan& plan, const Eigen::MatrixXd& base);

}  // namespace hmix

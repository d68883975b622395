#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "jointhaz/dataset.hpp"
#include "jointhaz/design.hpp"

namespace jointhaz {

struct LmmSpec {
  std::string outcome;
  std::vector<std::string> covariates;
  int time_degree = 2;        // adds t, t^2 to the fixed part
  bool random_effects = true; // z_i(t) = (1, t); false -> plain ML regression
};

// Variance parameterization used throughout: Q = L L' with
// L = [[exp(l1), 0], [l21, exp(l2)]], residual variance through log(sigma2).
Eigen::Matrix2d chol_to_q(const Eigen::Vector3d& lam);
Eigen::Vector3d q_to_chol(const Eigen::Matrix2d& Q);

struct LmmSubjectEstimates {
  Eigen::Vector2d mode = Eigen::Vector2d::Zero();  // empirical Bayes mode
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();   // conditional covariance
};

struct LmmFit {
  LmmSpec spec;
  std::vector<std::string> coef_names;
  Eigen::VectorXd beta;
  Eigen::VectorXd se_beta;
  Eigen::Matrix2d Q;
  double sigma2 = 0.0;
  double loglik = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> trace;
  std::vector<std::string> subject_ids;
  std::vector<LmmSubjectEstimates> subjects;
};

// Prebuilt per-subject design: rows with a non-missing outcome only.
struct LmmData {
  std::vector<Eigen::MatrixXd> X;
  std::vector<Eigen::MatrixXd> Z;
  std::vector<Eigen::VectorXd> y;
  std::vector<std::string> coef_names;
  std::vector<std::string> subject_ids;
  std::vector<Term> terms;
  int n_total = 0;
  int p() const { return X.empty() ? 0 : static_cast<int>(X[0].cols()); }
};

LmmData build_lmm_data(const Dataset& ds, const LmmSpec& spec);

// theta = (beta[p], l1, l21, l2, log sigma2); random effects integrated
// analytically. Exposed for score/oracle tests.
double lmm_loglik(const LmmData& data, const Eigen::VectorXd& theta,
                  int threads = 1);
Eigen::VectorXd lmm_score(const LmmData& data, const Eigen::VectorXd& theta,
                          int threads = 1);

LmmFit fit_lmm(const Dataset& ds, const LmmSpec& spec, int threads = 1);

// Posterior of b for one subject's measurements at the fitted parameters.
LmmSubjectEstimates eb_posterior(const LmmFit& fit, const SubjectHistory& h);

// x_long(t)' beta + (1, t) b for the subject (EB mode from the fit when the
// id matches a fitted subject, otherwise recomputed from the history).
double trajectory_value(const LmmFit& fit, const SubjectHistory& h, double t);
double trajectory_slope(const LmmFit& fit, const SubjectHistory& h, double t);

// Variants with an explicit random effect (used by joint model internals).
double trajectory_value_at(const std::vector<Term>& terms,
                           const Eigen::VectorXd& beta,
                           const Eigen::Vector2d& b, const SubjectHistory& h,
                           double t);
double trajectory_slope_at(const std::vector<Term>& terms,
                           const Eigen::VectorXd& beta,
                           const Eigen::Vector2d& b, const SubjectHistory& h,
                           double t);

}  // namespace jointhaz

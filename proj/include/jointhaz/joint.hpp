#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "jointhaz/assoc.hpp"
#include "jointhaz/bspline.hpp"
#include "jointhaz/cox.hpp"
#include "jointhaz/dataset.hpp"
#include "jointhaz/lmm.hpp"

namespace jointhaz {

struct BaselineSpec {
  int degree = 3;
  int interior_knots = 5;  // placed at event-time quantiles
};

struct JointSpec {
  LmmSpec lmm;
  std::vector<std::string> surv_covariates;
  AssociationSpec assoc;
  BaselineSpec baseline;
  int gh_nodes = 9;   // adaptive Gauss-Hermite nodes per dimension
  int gl_nodes = 15;  // Gauss-Legendre nodes per hazard segment
  int max_em_iter = 200;
  int max_direct_iter = 100;
  bool fix_alpha_zero = false;  // pin alpha at 0 (decoupling checks)
};

// theta = (beta[p], l1, l21, l2, log sigma2, gamma[q], alpha[K], omega[m])
struct JointLayout {
  int p = 0, q = 0, K = 0, m = 0;
  bool fix_alpha_zero = false;
  int dim() const { return p + 4 + q + K + m; }
  int beta_off() const { return 0; }
  int lam_off() const { return p; }
  int lsig_off() const { return p + 3; }
  int gamma_off() const { return p + 4; }
  int alpha_off() const { return p + 4 + q; }
  int omega_off() const { return p + 4 + q + K; }
  std::vector<int> free_indices() const;
};

struct JointFit {
  JointSpec spec;
  std::vector<std::string> beta_names, gamma_names, alpha_names;
  Eigen::VectorXd beta, se_beta;
  Eigen::Matrix2d Q;
  double sigma2 = 0.0;
  Eigen::VectorXd gamma, se_gamma;
  Eigen::VectorXd alpha, se_alpha;
  Eigen::VectorXd omega, se_omega;  // log-baseline spline coefficients
  BSplineBasis basis;
  double loglik = 0.0;
  double aic = 0.0;
  int n_free_params = 0;
  std::vector<double> trace;  // observed loglik, EM then direct polish
  int em_iterations = 0;
  int direct_iterations = 0;
  bool converged = false;
  bool se_reliable = false;
  std::vector<std::string> subject_ids;
  std::vector<LmmSubjectEstimates> subjects;  // posterior modes + curvature

  Eigen::VectorXd pack_theta() const;
  double log_baseline(double t) const { return basis.eval(t).dot(omega); }
};

// -2 loglik + 2k; k counts beta, gamma, alpha, omega, sigma2, 3 entries of Q
double aic(const JointFit& fit);

// Prepared joint likelihood: per-subject designs and Gauss-Legendre node
// caches for the hazard integral. The same object drives the EM fit, the
// direct polish, score evaluation and the public per-subject likelihood.
class JointModel {
 public:
  JointModel(const Dataset& ds, JointSpec spec);
  ~JointModel();
  JointModel(const JointModel&) = delete;
  JointModel& operator=(const JointModel&) = delete;

  const JointLayout& layout() const;
  const BSplineBasis& basis() const;
  const std::vector<std::string>& beta_names() const;
  const std::vector<std::string>& gamma_names() const;
  int n_subjects() const;

  // log integral over the 2-d random effects for one subject; throws
  // ConvergenceError naming the subject when the quadrature overflows
  double subject_loglik(const Eigen::VectorXd& theta, int subject,
                        int gh_override = -1) const;
  double loglik(const Eigen::VectorXd& theta, int threads = 1) const;
  // analytic observed-likelihood score (posterior-expected complete-data
  // score), used by the direct maximization phase
  Eigen::VectorXd score(const Eigen::VectorXd& theta, int threads = 1) const;

  Eigen::VectorXd initial_theta(int threads = 1) const;
  JointFit fit(int threads = 1) const;

 private:
  struct Impl;
  Impl* impl_;
};

JointFit fit_joint(const Dataset& ds, const JointSpec& spec, int threads = 1);

}  // namespace jointhaz

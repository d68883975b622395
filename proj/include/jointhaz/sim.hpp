#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "jointhaz/assoc.hpp"
#include "jointhaz/bspline.hpp"
#include "jointhaz/dataset.hpp"

namespace jointhaz {

// Ground truth for the synthetic joint-model generator. The trajectory is
// m_i(t) = (beta0 + b0) + (beta_t + b1) t + beta_t2 t^2 + sum_c beta_c x_c
// and the hazard is h_i(t) = h0(t) exp(sum_c gamma_c x_c + assoc(m_i, t)).
struct SimTruth {
  int n_subjects = 100;
  std::uint64_t seed = 1;

  double beta0 = 0.0, beta_t = 0.0, beta_t2 = 0.0;
  struct Covariate {
    std::string name;
    bool bernoulli = false;
    double mean = 0.0, sd = 1.0;  // normal
    double p = 0.5;               // bernoulli
    double beta = 0.0;            // longitudinal coefficient
    double gamma = 0.0;           // survival coefficient
  };
  std::vector<Covariate> covariates;

  Eigen::Matrix2d Q = Eigen::Matrix2d::Identity();
  double sigma2 = 1.0;

  AssociationSpec assoc;
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(1);

  enum BaselineForm { Constant, Weibull, Spline } baseline_form = Constant;
  double log_level = 0.0;             // constant
  double shape = 1.0, scale = 1.0;    // weibull
  int spline_degree = 3;
  std::vector<double> spline_interior;
  Eigen::VectorXd spline_coef;

  std::vector<double> schedule = {0.0};  // measurement grid within [0, 1)

  enum CensKind { NoCensoring, FixedCensoring, UniformCensoring } cens_kind =
      NoCensoring;
  double cens_a = 1.0, cens_b = 1.0;

  static SimTruth from_json_file(const std::string& path);
  static SimTruth from_json_string(const std::string& text);
  std::string to_json_string() const;

  Schema make_schema() const;
};

// One subject's latent draw (random effects + covariates), reproducible from
// (seed, subject) alone.
struct SubjectDraw {
  Eigen::Vector2d b = Eigen::Vector2d::Zero();
  std::vector<double> cov;
};

SubjectDraw draw_subject(const SimTruth& truth, int subject);

// true trajectory / hazard for a draw
double true_trajectory(const SimTruth& truth, const SubjectDraw& d, double t);
double true_log_hazard(const SimTruth& truth, const SubjectDraw& d, double t);

// start-stop-event panel with measurements y = m + eps on the schedule up to
// min(T, C); inverse-transform event times (bisection to 1e-10).
Dataset simulate(const SimTruth& truth);

// independent check: adaptive trapezoid cumulative hazard, 1e-9 abs tol
double oracle_cumhaz(const SimTruth& truth, const SubjectDraw& d, double t);

// the generator's own cumulative hazard (Gauss-Legendre accumulation),
// exposed for cross-implementation agreement tests
double gl_cumhaz(const SimTruth& truth, const SubjectDraw& d, double t);

}  // namespace jointhaz

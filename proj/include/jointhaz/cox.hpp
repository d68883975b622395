#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "jointhaz/dataset.hpp"
#include "jointhaz/design.hpp"

namespace jointhaz {

// Covariate computed on the fly at risk-set event times (e.g. a fitted
// trajectory in the two-stage model).
struct DynamicCovariate {
  std::string name;
  std::function<double(int subject, double t)> value;
};

struct CoxSpec {
  std::vector<std::string> covariates;  // row-valued (LVCF via start-stop rows)
  std::string outcome_as_tvc;           // optional: longitudinal outcome via LVCF
  std::vector<DynamicCovariate> dynamic;
};

struct CoxFit {
  CoxSpec spec;
  std::vector<std::string> coef_names;
  Eigen::VectorXd gamma;
  Eigen::VectorXd se;
  double loglik = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<bool> monotone_flag;  // likely monotone likelihood, per coefficient

  // Breslow cumulative baseline: step function with jumps at event times
  std::vector<double> baseline_times;
  std::vector<double> baseline_jumps;
  double cumulative_baseline(double t) const;
};

// Prepared counting-process layout; exposed so tests can evaluate the
// partial likelihood, score and information at arbitrary gamma.
struct CoxData {
  std::vector<std::string> coef_names;
  Eigen::MatrixXd x;                  // rows x p (static part)
  std::vector<int> subject_of_row;
  std::vector<double> tstart, tstop;
  std::vector<int> event;
  std::vector<double> event_times;    // distinct, ascending
  std::vector<int> event_mult;        // tie counts d_k
  std::vector<DynamicCovariate> dynamic;

  int p() const { return static_cast<int>(x.cols()) + static_cast<int>(dynamic.size()); }
  Eigen::VectorXd covariates(int row, double t) const;
};

CoxData build_cox_data(const Dataset& ds, const CoxSpec& spec);

double cox_partial_loglik(const CoxData& data, const Eigen::VectorXd& gamma);
Eigen::VectorXd cox_score(const CoxData& data, const Eigen::VectorXd& gamma);
Eigen::MatrixXd cox_information(const CoxData& data, const Eigen::VectorXd& gamma);

CoxFit fit_cox(const Dataset& ds, const CoxSpec& spec, int threads = 1);

// H0(t) = sum_{event times <= t} d_k / sum_{at risk} exp(x' gamma)
std::pair<std::vector<double>, std::vector<double>> breslow_baseline(
    const CoxFit& fit, const Dataset& ds);

// fit_cox with the observed longitudinal outcome carried forward as a TVC
CoxFit fit_tvc_model(const Dataset& ds, const CoxSpec& spec, int threads = 1);

}  // namespace jointhaz

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "jointhaz/cox.hpp"
#include "jointhaz/joint.hpp"
#include "jointhaz/twostage.hpp"

namespace jointhaz {

// direct effect gamma, mediated effect alpha*beta, total alpha*beta + gamma
struct Decomposition {
  std::string covariate;
  double direct = 0.0;
  double indirect = 0.0;
  double total = 0.0;
};

// Only defined for the current-value association and for covariates present
// in both submodels.
Decomposition decompose(const JointFit& fit, const std::string& covariate);

struct DynamicPrediction {
  double s = 0.0;                 // conditioning time (last measurement)
  std::vector<double> horizon;    // u >= s
  std::vector<double> mean;       // P(T > u | T > s, history)
  std::vector<double> lo, hi;     // pointwise 95% band
  std::vector<double> mcse;       // Monte-Carlo standard error of the mean
  int draws = 0;
};

struct PredictOptions {
  int draws = 500;
  std::uint64_t seed = 1;
  int threads = 1;
};

// Conditional survival by importance sampling from the Laplace approximation
// of p(b | measurements, T > s); deterministic given the seed regardless of
// thread count (counter-based per-draw streams).
DynamicPrediction predict_survival(const JointFit& fit, const SubjectHistory& h,
                                   const std::vector<double>& horizons,
                                   const PredictOptions& opts = {});

// posterior mode of b given the history and survival to its last measurement
Eigen::Vector2d conditional_mode(const JointFit& fit, const SubjectHistory& h);

// predict_survival on the history extended with a new measurement; appending
// an exact duplicate of an existing measurement is a no-op (no new
// information).
DynamicPrediction update_prediction(const JointFit& fit, const SubjectHistory& h,
                                    double t_new, double y_new,
                                    const std::vector<double>& horizons,
                                    const PredictOptions& opts = {});

struct MseRow {
  std::string model;
  double horizon = 0.0;
  double mse = 0.0;
  int n = 0;
};

// Predicted event probability at last-measurement + horizon vs realized
// status; subjects censored before the horizon are excluded at that horizon.
std::vector<MseRow> mse_harness(const JointFit& joint, const TwoStageFit& twostage,
                                const CoxFit& tvc, const Dataset& holdout,
                                const std::vector<double>& horizons,
                                const PredictOptions& opts = {});

}  // namespace jointhaz

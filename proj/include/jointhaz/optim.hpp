#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

namespace jointhaz {

struct OptimOptions {
  int max_iter = 200;
  double rel_tol = 1e-9;   // relative objective change
  double grad_tol = 1e-6;  // gradient infinity norm
};

struct OptimResult {
  Eigen::VectorXd x;
  double f = 0.0;               // maximized objective value
  int iterations = 0;
  bool converged = false;
  double grad_norm = 0.0;
  std::vector<double> trace;    // accepted objective values, non-decreasing
};

// Objective returns f(x) and fills grad when non-null. Non-finite values are
// treated as -inf (step rejected by the line search).
using Objective =
    std::function<double(const Eigen::VectorXd&, Eigen::VectorXd*)>;

// BFGS ascent with Armijo backtracking.
OptimResult bfgs_maximize(const Objective& obj, const Eigen::VectorXd& x0,
                          const OptimOptions& opts = {});

}  // namespace jointhaz

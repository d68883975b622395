#pragma once

#include <Eigen/Dense>
#include <vector>

namespace jointhaz {

// Clamped B-spline basis on [lo, hi]. dim = degree + interior + 1.
class BSplineBasis {
 public:
  BSplineBasis() = default;
  BSplineBasis(int degree, std::vector<double> interior_knots, double lo, double hi);

  // All basis functions at t; t outside [lo, hi] is clamped.
  Eigen::VectorXd eval(double t) const;

  int dim() const { return dim_; }
  int degree() const { return degree_; }
  double lo() const { return lo_; }
  double hi() const { return hi_; }
  const std::vector<double>& interior() const { return interior_; }

  // Interior knots at event-time quantiles; falls back to an even grid when
  // there are too few distinct event times.
  static BSplineBasis from_event_quantiles(std::vector<double> event_times,
                                           int interior, int degree, double lo,
                                           double hi);

 private:
  int degree_ = 3;
  int dim_ = 0;
  double lo_ = 0.0, hi_ = 1.0;
  std::vector<double> interior_;
  std::vector<double> knots_;  // full clamped knot vector
};

}  // namespace jointhaz

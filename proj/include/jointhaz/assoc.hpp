#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "jointhaz/dataset.hpp"
#include "jointhaz/design.hpp"

namespace jointhaz {

// Which functional of the trajectory enters the log-hazard.
struct AssociationSpec {
  enum Kind { Value, Slope, ValueAndSlope, Cumulative, Lagged } kind = Value;
  double lag = 0.0;  // only for Lagged; lag 0 reduces to Value

  int n_alpha() const { return kind == ValueAndSlope ? 2 : 1; }
  std::vector<std::string> alpha_names() const;

  // "value" | "slope" | "both" | "cumulative" | "lagged:<c>"
  static AssociationSpec parse(const std::string& s);
  std::string to_string() const;
};

// Contribution added to the log-hazard at time t for a trajectory defined by
// (terms, beta, b) on the subject's covariate paths:
//   value       alpha * m(t)
//   slope       alpha * m'(t)
//   both        alpha1 * m(t) + alpha2 * m'(t)
//   cumulative  alpha * int_0^t m(s) ds
//   lagged      alpha * m(max(t - c, 0))
double assoc_term(const std::vector<Term>& terms, const Eigen::VectorXd& beta,
                  const Eigen::Vector2d& b, const SubjectHistory& h, double t,
                  const AssociationSpec& spec, const Eigen::VectorXd& alpha);

}  // namespace jointhaz

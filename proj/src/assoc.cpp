#include "jointhaz/assoc.hpp"

#include <cmath>

#include "jointhaz/errors.hpp"
#include "jointhaz/lmm.hpp"

namespace jointhaz {

std::vector<std::string> AssociationSpec::alpha_names() const {
  switch (kind) {
    case Value: return {"alpha_value"};
    case Slope: return {"alpha_slope"};
    case ValueAndSlope: return {"alpha_value", "alpha_slope"};
    case Cumulative: return {"alpha_cumulative"};
    case Lagged: return {"alpha_lagged"};
  }
  return {};
}

AssociationSpec AssociationSpec::parse(const std::string& s) {
  AssociationSpec spec;
  if (s == "value") {
    spec.kind = Value;
  } else if (s == "slope") {
    spec.kind = Slope;
  } else if (s == "both") {
    spec.kind = ValueAndSlope;
  } else if (s == "cumulative") {
    spec.kind = Cumulative;
  } else if (s.rfind("lagged:", 0) == 0) {
    spec.kind = Lagged;
    try {
      spec.lag = std::stod(s.substr(7));
    } catch (...) {
      throw UsageError("association: bad lag in '" + s + "'");
    }
    if (spec.lag < 0.0) throw UsageError("association: lag must be >= 0");
  } else if (s == "lagged") {
    throw UsageError("association: lagged needs a lag, use lagged:<c>");
  } else {
    throw UsageError("association: unknown kind '" + s +
                     "' (value|slope|both|cumulative|lagged:<c>)");
  }
  return spec;
}

std::string AssociationSpec::to_string() const {
  switch (kind) {
    case Value: return "value";
    case Slope: return "slope";
    case ValueAndSlope: return "both";
    case Cumulative: return "cumulative";
    case Lagged: {
      char buf[40];
      std::snprintf(buf, sizeof(buf), "lagged:%.17g", lag);
      return buf;
    }
  }
  return "value";
}

double assoc_term(const std::vector<Term>& terms, const Eigen::VectorXd& beta,
                  const Eigen::Vector2d& b, const SubjectHistory& h, double t,
                  const AssociationSpec& spec, const Eigen::VectorXd& alpha) {
  if (alpha.size() != spec.n_alpha())
    throw UsageError("assoc_term: alpha has wrong length for association kind");
  switch (spec.kind) {
    case AssociationSpec::Value:
      return alpha(0) * trajectory_value_at(terms, beta, b, h, t);
    case AssociationSpec::Slope:
      return alpha(0) * trajectory_slope_at(terms, beta, b, h, t);
    case AssociationSpec::ValueAndSlope:
      return alpha(0) * trajectory_value_at(terms, beta, b, h, t) +
             alpha(1) * trajectory_slope_at(terms, beta, b, h, t);
    case AssociationSpec::Cumulative: {
      // int_0^t m(s) ds; the design integral is exact for polynomial time
      // terms and piecewise-constant covariate paths
      double fixed = design_integral(terms, h, t).dot(beta);
      double random = b(0) * t + 0.5 * b(1) * t * t;
      return alpha(0) * (fixed + random);
    }
    case AssociationSpec::Lagged: {
      double tl = std::max(t - spec.lag, 0.0);
      return alpha(0) * trajectory_value_at(terms, beta, b, h, tl);
    }
  }
  return 0.0;
}

}  // namespace jointhaz

#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "jointhaz/dataset.hpp"

namespace jointhaz {

// One column of a model matrix. Categorical covariates expand to
// reference-coded dummies (reference = first declared level).
struct Term {
  enum Kind { Intercept, TimePow, Covariate, Dummy } kind = Covariate;
  std::string column;
  int level = 0;  // Dummy: level index >= 1
  int power = 1;  // TimePow
  std::string name() const;
};

std::vector<Term> expand_terms(const Schema& schema,
                               const std::vector<std::string>& covariates,
                               int time_degree, bool intercept);

std::vector<std::string> term_names(const std::vector<Term>& terms);

// Internal step lookup that extends the first observed value backwards to
// t = 0 (used by hazard integrals with delayed entry); the public
// lvcf_value stays strict.
double step_lookup(const SubjectHistory& h, const std::string& covariate,
                   double t);

double term_value_at_row(const Dataset& ds, const Term& term, int row,
                         double time);
double term_value_at_time(const SubjectHistory& h, const Term& term, double t);
double term_slope_at_time(const SubjectHistory& h, const Term& term, double t);
// \int_0^t of the term path (steps integrate piecewise, time powers exactly)
double term_integral_to(const SubjectHistory& h, const Term& term, double t);

// Design row vectors at time t for a subject
Eigen::RowVectorXd design_value(const std::vector<Term>& terms,
                                const SubjectHistory& h, double t);
Eigen::RowVectorXd design_slope(const std::vector<Term>& terms,
                                const SubjectHistory& h, double t);
Eigen::RowVectorXd design_integral(const std::vector<Term>& terms,
                                   const SubjectHistory& h, double t);

// Inverse of term_names: reconstruct terms from coefficient labels
// ("(Intercept)", "t", "t^2", "col=lvlK", plain covariate names).
std::vector<Term> terms_from_coef_names(const std::vector<std::string>& names);

// Throws DataError naming the collinear columns when X is rank deficient.
void check_full_rank(const Eigen::MatrixXd& X,
                     const std::vector<std::string>& names,
                     const std::string& context);

}  // namespace jointhaz

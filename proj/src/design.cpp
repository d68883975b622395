#include "jointhaz/design.hpp"

#include <cmath>
#include <limits>

#include "jointhaz/errors.hpp"

namespace jointhaz {

std::string Term::name() const {
  switch (kind) {
    case Intercept: return "(Intercept)";
    case TimePow: return power == 1 ? "t" : "t^" + std::to_string(power);
    case Covariate: return column;
    case Dummy: return column;  // adjusted by expand_terms with level label
  }
  return column;
}

std::vector<Term> expand_terms(const Schema& schema,
                               const std::vector<std::string>& covariates,
                               int time_degree, bool intercept) {
  std::vector<Term> terms;
  if (intercept) terms.push_back({Term::Intercept, "", 0, 0});
  for (int p = 1; p <= time_degree; ++p) terms.push_back({Term::TimePow, "", 0, p});
  for (const auto& name : covariates) {
    const ColumnSpec& spec = schema.at(name);
    if (spec.kind == ColKind::Numeric) {
      terms.push_back({Term::Covariate, name, 0, 1});
    } else if (spec.kind == ColKind::Categorical) {
      for (int l = 1; l < static_cast<int>(spec.levels.size()); ++l)
        terms.push_back({Term::Dummy, name, l, 1});
    } else {
      throw DataError("covariate '" + name + "' must be numeric or categorical");
    }
  }
  return terms;
}

std::vector<std::string> term_names(const std::vector<Term>& terms) {
  std::vector<std::string> names;
  names.reserve(terms.size());
  for (const auto& t : terms) {
    if (t.kind == Term::Dummy) {
      names.push_back(t.column + "=lvl" + std::to_string(t.level));
    } else {
      names.push_back(t.name());
    }
  }
  return names;
}

double step_lookup(const SubjectHistory& h, const std::string& covariate,
                   double t) {
  auto it = h.step_values.find(covariate);
  if (it == h.step_values.end())
    throw DataError("unknown covariate '" + covariate + "' for subject " + h.id);
  int idx = 0;
  for (std::size_t k = 1; k < h.step_times.size(); ++k)
    if (h.step_times[k] <= t) idx = static_cast<int>(k);
  return it->second[idx];
}

double term_value_at_row(const Dataset& ds, const Term& term, int row, double time) {
  switch (term.kind) {
    case Term::Intercept: return 1.0;
    case Term::TimePow: return std::pow(time, term.power);
    case Term::Covariate: {
      double v = ds.values.at(term.column)[row];
      if (std::isnan(v))
        throw DataError("missing covariate '" + term.column + "' for subject " +
                        ds.id[row]);
      return v;
    }
    case Term::Dummy: {
      double v = ds.values.at(term.column)[row];
      if (std::isnan(v))
        throw DataError("missing covariate '" + term.column + "' for subject " +
                        ds.id[row]);
      return static_cast<int>(v) == term.level ? 1.0 : 0.0;
    }
  }
  return 0.0;
}

double term_value_at_time(const SubjectHistory& h, const Term& term, double t) {
  switch (term.kind) {
    case Term::Intercept: return 1.0;
    case Term::TimePow: return std::pow(t, term.power);
    case Term::Covariate: return step_lookup(h, term.column, t);
    case Term::Dummy:
      return static_cast<int>(step_lookup(h, term.column, t)) == term.level ? 1.0
                                                                            : 0.0;
  }
  return 0.0;
}

double term_slope_at_time(const SubjectHistory& h, const Term& term, double t) {
  // step covariates have zero slope between jumps
  if (term.kind == Term::TimePow)
    return term.power * std::pow(t, term.power - 1);
  (void)h;
  return 0.0;
}

double term_integral_to(const SubjectHistory& h, const Term& term, double t) {
  switch (term.kind) {
    case Term::Intercept: return t;
    case Term::TimePow: return std::pow(t, term.power + 1) / (term.power + 1);
    case Term::Covariate:
    case Term::Dummy: {
      // piecewise-constant path; first observed value extends back to 0
      const auto& vals = h.step_values.at(term.column);
      double acc = 0.0;
      for (std::size_t k = 0; k < h.step_times.size(); ++k) {
        double seg_lo = (k == 0) ? 0.0 : h.step_times[k];
        double seg_hi = (k + 1 < h.step_times.size())
                            ? h.step_times[k + 1]
                            : std::numeric_limits<double>::infinity();
        double hi = std::min(seg_hi, t);
        if (hi > seg_lo) {
          double v = term.kind == Term::Covariate
                         ? vals[k]
                         : (static_cast<int>(vals[k]) == term.level ? 1.0 : 0.0);
          acc += v * (hi - seg_lo);
        }
        if (seg_hi >= t) break;
      }
      return acc;
    }
  }
  return 0.0;
}

Eigen::RowVectorXd design_value(const std::vector<Term>& terms,
                                const SubjectHistory& h, double t) {
  Eigen::RowVectorXd out(terms.size());
  for (std::size_t j = 0; j < terms.size(); ++j)
    out(j) = term_value_at_time(h, terms[j], t);
  return out;
}

Eigen::RowVectorXd design_slope(const std::vector<Term>& terms,
                                const SubjectHistory& h, double t) {
  Eigen::RowVectorXd out(terms.size());
  for (std::size_t j = 0; j < terms.size(); ++j)
    out(j) = term_slope_at_time(h, terms[j], t);
  return out;
}

Eigen::RowVectorXd design_integral(const std::vector<Term>& terms,
                                   const SubjectHistory& h, double t) {
  Eigen::RowVectorXd out(terms.size());
  for (std::size_t j = 0; j < terms.size(); ++j)
    out(j) = term_integral_to(h, terms[j], t);
  return out;
}

std::vector<Term> terms_from_coef_names(const std::vector<std::string>& names) {
  std::vector<Term> terms;
  for (const auto& n : names) {
    if (n == "(Intercept)") {
      terms.push_back({Term::Intercept, "", 0, 0});
    } else if (n == "t") {
      terms.push_back({Term::TimePow, "", 0, 1});
    } else if (n.rfind("t^", 0) == 0 &&
               n.find_first_not_of("0123456789", 2) == std::string::npos) {
      terms.push_back({Term::TimePow, "", 0, std::stoi(n.substr(2))});
    } else if (auto pos = n.find("=lvl"); pos != std::string::npos) {
      terms.push_back({Term::Dummy, n.substr(0, pos), std::stoi(n.substr(pos + 4)), 1});
    } else {
      terms.push_back({Term::Covariate, n, 0, 1});
    }
  }
  return terms;
}

void check_full_rank(const Eigen::MatrixXd& X,
                     const std::vector<std::string>& names,
                     const std::string& context) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  qr.setThreshold(1e-10);
  int rank = static_cast<int>(qr.rank());
  int p = static_cast<int>(X.cols());
  if (rank < p) {
    std::string cols;
    const auto& perm = qr.colsPermutation().indices();
    for (int j = rank; j < p; ++j) {
      if (!cols.empty()) cols += ", ";
      cols += names[perm(j)];
    }
    throw DataError(context + ": design is rank deficient; collinear columns: " +
                    cols);
  }
}

}  // namespace jointhaz

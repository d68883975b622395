#include "jointhaz/cox.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "jointhaz/csv.hpp"
#include "jointhaz/errors.hpp"
#include "jointhaz/threading.hpp"

namespace jointhaz {

double CoxFit::cumulative_baseline(double t) const {
  double h = 0.0;
  for (std::size_t k = 0; k < baseline_times.size(); ++k) {
    if (baseline_times[k] > t) break;
    h += baseline_jumps[k];
  }
  return h;
}

Eigen::VectorXd CoxData::covariates(int row, double t) const {
  Eigen::VectorXd out(p());
  out.head(x.cols()) = x.row(row);
  for (std::size_t d = 0; d < dynamic.size(); ++d)
    out(x.cols() + d) = dynamic[d].value(subject_of_row[row], t);
  return out;
}

CoxData build_cox_data(const Dataset& ds, const CoxSpec& spec) {
  CoxData data;
  std::vector<Term> terms = expand_terms(ds.schema, spec.covariates, 0, false);
  data.coef_names = term_names(terms);

  bool with_outcome = !spec.outcome_as_tvc.empty();
  if (with_outcome) data.coef_names.push_back(spec.outcome_as_tvc);
  for (const auto& d : spec.dynamic) data.coef_names.push_back(d.name);
  data.dynamic = spec.dynamic;

  int n = ds.n_rows();
  int p_static = static_cast<int>(terms.size()) + (with_outcome ? 1 : 0);
  data.x.resize(n, p_static);
  data.subject_of_row.resize(n);
  data.tstart = ds.tstart;
  data.tstop = ds.tstop;
  data.event = ds.event;

  const std::vector<double>* ycol =
      with_outcome ? &ds.values.at(spec.outcome_as_tvc) : nullptr;

  for (int g = 0; g < ds.n_subjects(); ++g) {
    auto [lo, hi] = ds.groups[g];
    double carried = std::numeric_limits<double>::quiet_NaN();
    for (int r = lo; r < hi; ++r) {
      data.subject_of_row[r] = g;
      for (std::size_t j = 0; j < terms.size(); ++j)
        data.x(r, j) = term_value_at_row(ds, terms[j], r, ds.tstart[r]);
      if (with_outcome) {
        double v = (*ycol)[r];
        if (std::isnan(v)) {
          if (std::isnan(carried))
            throw DataError("tvc: subject " + ds.subject_ids[g] +
                            " has no observed outcome before t=" +
                            format_double(ds.tstart[r]));
          v = carried;
        }
        carried = v;
        data.x(r, terms.size()) = v;
      }
    }
  }

  std::vector<double> times;
  for (int r = 0; r < n; ++r)
    if (ds.event[r] == 1) times.push_back(ds.tstop[r]);
  if (times.empty()) throw DataError("cox: no events in dataset");
  std::sort(times.begin(), times.end());
  for (double t : times) {
    if (!data.event_times.empty() && data.event_times.back() == t) {
      ++data.event_mult.back();
    } else {
      data.event_times.push_back(t);
      data.event_mult.push_back(1);
    }
  }

  if (p_static > 0) {
    std::vector<std::string> static_names(data.coef_names.begin(),
                                          data.coef_names.begin() + p_static);
    check_full_rank(data.x, static_names, "cox");
  }
  return data;
}

namespace {

// One pass over risk sets; fills whichever of (loglik, score, info) are
// requested. Breslow tie handling: each of the d_k ties contributes the
// full risk-set denominator.
void cox_pass(const CoxData& data, const Eigen::VectorXd& gamma, double* loglik,
              Eigen::VectorXd* score, Eigen::MatrixXd* info) {
  int p = data.p();
  int n = static_cast<int>(data.tstart.size());
  if (loglik) *loglik = 0.0;
  if (score) score->setZero(p);
  if (info) info->setZero(p, p);

  for (std::size_t k = 0; k < data.event_times.size(); ++k) {
    double tk = data.event_times[k];
    int dk = data.event_mult[k];
    double s0 = 0.0;
    Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p);
    Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(p, p);
    double sum_eta_events = 0.0;
    Eigen::VectorXd sum_x_events = Eigen::VectorXd::Zero(p);

    for (int r = 0; r < n; ++r) {
      if (!(data.tstart[r] < tk && tk <= data.tstop[r])) continue;
      Eigen::VectorXd xr = data.covariates(r, tk);
      double eta = xr.dot(gamma);
      double w = std::exp(eta);
      s0 += w;
      if (score || info) s1 += w * xr;
      if (info) s2 += w * (xr * xr.transpose());
      if (data.event[r] == 1 && data.tstop[r] == tk) {
        sum_eta_events += eta;
        sum_x_events += xr;
      }
    }
    if (loglik) *loglik += sum_eta_events - dk * std::log(s0);
    if (score) *score += sum_x_events - (dk / s0) * s1;
    if (info) {
      Eigen::VectorXd xbar = s1 / s0;
      *info += dk * (s2 / s0 - xbar * xbar.transpose());
    }
  }
}

}  // namespace

double cox_partial_loglik(const CoxData& data, const Eigen::VectorXd& gamma) {
  double ll;
  cox_pass(data, gamma, &ll, nullptr, nullptr);
  return ll;
}

Eigen::VectorXd cox_score(const CoxData& data, const Eigen::VectorXd& gamma) {
  Eigen::VectorXd u;
  cox_pass(data, gamma, nullptr, &u, nullptr);
  return u;
}

Eigen::MatrixXd cox_information(const CoxData& data, const Eigen::VectorXd& gamma) {
  Eigen::MatrixXd I;
  cox_pass(data, gamma, nullptr, nullptr, &I);
  return I;
}

CoxFit fit_cox(const Dataset& ds, const CoxSpec& spec, int threads) {
  (void)threads;
  CoxData data = build_cox_data(ds, spec);
  int p = data.p();

  CoxFit fit;
  fit.spec = spec;
  fit.coef_names = data.coef_names;
  fit.gamma = Eigen::VectorXd::Zero(p);
  fit.monotone_flag.assign(p, false);

  double ll;
  Eigen::VectorXd u(p);
  Eigen::MatrixXd I(p, p);
  cox_pass(data, fit.gamma, &ll, &u, &I);

  const int max_iter = 50;
  const double rel_tol = 1e-9;
  int iter = 0;
  if (p > 0) {
    for (iter = 1; iter <= max_iter; ++iter) {
      Eigen::VectorXd step = I.ldlt().solve(u);
      double step_scale = 1.0;
      double ll_new = -std::numeric_limits<double>::infinity();
      Eigen::VectorXd g_new;
      for (int h = 0; h < 40; ++h) {
        g_new = fit.gamma + step_scale * step;
        cox_pass(data, g_new, &ll_new, nullptr, nullptr);
        if (std::isfinite(ll_new) && ll_new >= ll - 1e-12) break;
        step_scale *= 0.5;
      }
      fit.gamma = g_new;
      double dll = ll_new - ll;
      ll = ll_new;
      cox_pass(data, fit.gamma, nullptr, &u, &I);
      if (std::abs(dll) <= rel_tol * (1.0 + std::abs(ll)) &&
          u.lpNorm<Eigen::Infinity>() < 1e-8) {
        fit.converged = true;
        break;
      }
    }
  } else {
    fit.converged = true;
  }
  fit.loglik = ll;
  fit.iterations = std::min(iter, max_iter);

  // a runaway coefficient indicates monotone likelihood (perfect separation)
  for (int j = 0; j < p; ++j)
    if (std::abs(fit.gamma(j)) > 12.0) fit.monotone_flag[j] = true;
  if (!fit.converged &&
      std::none_of(fit.monotone_flag.begin(), fit.monotone_flag.end(),
                   [](bool b) { return b; }) &&
      u.lpNorm<Eigen::Infinity>() > 1e-4)
    throw ConvergenceError("cox: Newton-Raphson did not converge");

  if (p > 0) {
    Eigen::MatrixXd cov = I.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
    fit.se = cov.diagonal().cwiseSqrt();
  } else {
    fit.se.resize(0);
  }

  // Breslow baseline at the estimate
  for (std::size_t k = 0; k < data.event_times.size(); ++k) {
    double tk = data.event_times[k];
    double s0 = 0.0;
    for (int r = 0; r < static_cast<int>(data.tstart.size()); ++r) {
      if (data.tstart[r] < tk && tk <= data.tstop[r])
        s0 += std::exp(data.covariates(r, tk).dot(fit.gamma));
    }
    fit.baseline_times.push_back(tk);
    fit.baseline_jumps.push_back(data.event_mult[k] / s0);
  }
  return fit;
}

std::pair<std::vector<double>, std::vector<double>> breslow_baseline(
    const CoxFit& fit, const Dataset& ds) {
  (void)ds;
  return {fit.baseline_times, fit.baseline_jumps};
}

CoxFit fit_tvc_model(const Dataset& ds, const CoxSpec& spec, int threads) {
  if (spec.outcome_as_tvc.empty())
    throw UsageError("fit_tvc_model: spec must name the outcome column");
  return fit_cox(ds, spec, threads);
}

}  // namespace jointhaz

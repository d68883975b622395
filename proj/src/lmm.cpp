#include "jointhaz/lmm.hpp"

#include <cmath>
#include <limits>

#include "jointhaz/errors.hpp"
#include "jointhaz/optim.hpp"
#include "jointhaz/threading.hpp"

namespace jointhaz {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;
}

Eigen::Matrix2d chol_to_q(const Eigen::Vector3d& lam) {
  Eigen::Matrix2d L;
  L << std::exp(lam(0)), 0.0, lam(1), std::exp(lam(2));
  return L * L.transpose();
}

Eigen::Vector3d q_to_chol(const Eigen::Matrix2d& Q) {
  Eigen::LLT<Eigen::Matrix2d> llt(Q);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument("q_to_chol: Q is not positive definite");
  Eigen::Matrix2d L = llt.matrixL();
  return {std::log(L(0, 0)), L(1, 0), std::log(L(1, 1))};
}

LmmData build_lmm_data(const Dataset& ds, const LmmSpec& spec) {
  if (spec.outcome.empty()) throw DataError("lmm: outcome column not set");
  if (ds.schema.at(spec.outcome).kind != ColKind::Numeric)
    throw DataError("lmm: outcome '" + spec.outcome + "' must be numeric");
  if (spec.random_effects && spec.time_degree < 1)
    throw DataError("lmm: random slope requires a time term in the fixed part");

  LmmData data;
  data.terms = expand_terms(ds.schema, spec.covariates, spec.time_degree, true);
  data.coef_names = term_names(data.terms);

  const auto& ycol = ds.values.at(spec.outcome);
  int p = static_cast<int>(data.terms.size());
  for (int g = 0; g < ds.n_subjects(); ++g) {
    auto [lo, hi] = ds.groups[g];
    std::vector<int> rows;
    for (int r = lo; r < hi; ++r)
      if (!std::isnan(ycol[r])) rows.push_back(r);
    if (rows.empty())
      throw DataError("lmm: subject " + ds.subject_ids[g] +
                      " has no measurements of '" + spec.outcome + "'");
    int ni = static_cast<int>(rows.size());
    Eigen::MatrixXd X(ni, p), Z(ni, 2);
    Eigen::VectorXd y(ni);
    for (int k = 0; k < ni; ++k) {
      int r = rows[k];
      double t = ds.tstart[r];
      for (int j = 0; j < p; ++j)
        X(k, j) = term_value_at_row(ds, data.terms[j], r, t);
      Z(k, 0) = 1.0;
      Z(k, 1) = t;
      y(k) = ycol[r];
    }
    data.X.push_back(std::move(X));
    data.Z.push_back(std::move(Z));
    data.y.push_back(std::move(y));
    data.subject_ids.push_back(ds.subject_ids[g]);
    data.n_total += ni;
  }

  Eigen::MatrixXd Xall(data.n_total, p);
  int at = 0;
  for (const auto& X : data.X) {
    Xall.middleRows(at, X.rows()) = X;
    at += static_cast<int>(X.rows());
  }
  check_full_rank(Xall, data.coef_names, "lmm");
  return data;
}

namespace {

struct SubjectTerms {
  double loglik;
  Eigen::VectorXd grad;  // full theta gradient
};

// marginal Gaussian per subject: y_i ~ N(X_i beta, Z Q Z' + sigma2 I)
SubjectTerms subject_terms(const LmmData& data, int i, const Eigen::VectorXd& beta,
                           const Eigen::Vector3d& lam, double log_s2,
                           bool want_grad) {
  const Eigen::MatrixXd& X = data.X[i];
  const Eigen::MatrixXd& Z = data.Z[i];
  const Eigen::VectorXd& y = data.y[i];
  int ni = static_cast<int>(y.size());
  int p = static_cast<int>(X.cols());
  double s2 = std::exp(log_s2);
  Eigen::Matrix2d Q = chol_to_q(lam);

  Eigen::MatrixXd V = Z * Q * Z.transpose();
  V.diagonal().array() += s2;
  Eigen::LLT<Eigen::MatrixXd> llt(V);
  if (llt.info() != Eigen::Success) {
    // degenerate trial point; the line search backs off on -inf
    SubjectTerms bad;
    bad.loglik = -std::numeric_limits<double>::infinity();
    if (want_grad) bad.grad = Eigen::VectorXd::Zero(p + 4);
    return bad;
  }
  Eigen::VectorXd r = y - X * beta;
  Eigen::VectorXd u = llt.solve(r);
  double logdet = 0.0;
  for (int k = 0; k < ni; ++k) logdet += 2.0 * std::log(llt.matrixL()(k, k));

  SubjectTerms out;
  out.loglik = -0.5 * (ni * kLog2Pi + logdet + r.dot(u));
  if (!want_grad) return out;

  Eigen::MatrixXd W = llt.solve(Eigen::MatrixXd::Identity(ni, ni));
  out.grad = Eigen::VectorXd::Zero(p + 4);
  out.grad.head(p) = X.transpose() * u;

  Eigen::Vector2d v = Z.transpose() * u;
  Eigen::Matrix2d M = Z.transpose() * W * Z;
  Eigen::Matrix2d L;
  L << std::exp(lam(0)), 0.0, lam(1), std::exp(lam(2));
  Eigen::Matrix2d dL[3];
  dL[0] << L(0, 0), 0, 0, 0;
  dL[1] << 0, 0, 1, 0;
  dL[2] << 0, 0, 0, L(1, 1);
  for (int k = 0; k < 3; ++k) {
    Eigen::Matrix2d dQ = dL[k] * L.transpose() + L * dL[k].transpose();
    out.grad(p + k) = 0.5 * (v.dot(dQ * v) - (M * dQ).trace());
  }
  out.grad(p + 3) = 0.5 * s2 * (u.squaredNorm() - W.trace());
  return out;
}

void accumulate(const LmmData& data, const Eigen::VectorXd& theta, int threads,
                bool want_grad, double* loglik, Eigen::VectorXd* grad) {
  int p = data.p();
  Eigen::VectorXd beta = theta.head(p);
  Eigen::Vector3d lam = theta.segment<3>(p);
  double log_s2 = theta(p + 3);
  int n = static_cast<int>(data.X.size());
  std::vector<double> lls(n);
  std::vector<Eigen::VectorXd> grads(want_grad ? n : 0);
  parallel_for(n, threads, [&](int i) {
    auto t = subject_terms(data, i, beta, lam, log_s2, want_grad);
    lls[i] = t.loglik;
    if (want_grad) grads[i] = std::move(t.grad);
  });
  *loglik = neumaier_sum(lls);
  if (want_grad) {
    grad->setZero(p + 4);
    for (const auto& g : grads) *grad += g;
  }
}

}  // namespace

double lmm_loglik(const LmmData& data, const Eigen::VectorXd& theta, int threads) {
  double ll;
  accumulate(data, theta, threads, false, &ll, nullptr);
  return ll;
}

Eigen::VectorXd lmm_score(const LmmData& data, const Eigen::VectorXd& theta,
                          int threads) {
  double ll;
  Eigen::VectorXd g;
  accumulate(data, theta, threads, true, &ll, &g);
  return g;
}

namespace {

// GLS beta for fixed variance parameters (profiling step)
Eigen::VectorXd gls_beta(const LmmData& data, const Eigen::Vector3d& lam,
                         double log_s2, Eigen::MatrixXd* info_out) {
  int p = data.p();
  double s2 = std::exp(log_s2);
  Eigen::Matrix2d Q = chol_to_q(lam);
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd bvec = Eigen::VectorXd::Zero(p);
  for (std::size_t i = 0; i < data.X.size(); ++i) {
    const Eigen::MatrixXd& X = data.X[i];
    const Eigen::MatrixXd& Z = data.Z[i];
    Eigen::MatrixXd V = Z * Q * Z.transpose();
    V.diagonal().array() += s2;
    Eigen::LLT<Eigen::MatrixXd> llt(V);
    Eigen::MatrixXd WX = llt.solve(X);
    A += X.transpose() * WX;
    bvec += WX.transpose() * data.y[i];
  }
  if (info_out) *info_out = A;
  return A.ldlt().solve(bvec);
}

LmmFit fit_ols(const Dataset& ds, const LmmSpec& spec, const LmmData& data) {
  // random effects constrained off: exact ML is ordinary least squares
  int p = data.p();
  Eigen::MatrixXd X(data.n_total, p);
  Eigen::VectorXd y(data.n_total);
  int at = 0;
  for (std::size_t i = 0; i < data.X.size(); ++i) {
    X.middleRows(at, data.X[i].rows()) = data.X[i];
    y.segment(at, data.y[i].size()) = data.y[i];
    at += static_cast<int>(data.X[i].rows());
  }
  LmmFit fit;
  fit.spec = spec;
  fit.coef_names = data.coef_names;
  fit.beta = (X.transpose() * X).ldlt().solve(X.transpose() * y);
  double rss = (y - X * fit.beta).squaredNorm();
  fit.sigma2 = rss / data.n_total;
  fit.Q.setZero();
  fit.loglik = fit.sigma2 > 0.0
                   ? -0.5 * data.n_total * (kLog2Pi + std::log(fit.sigma2) + 1.0)
                   : std::numeric_limits<double>::infinity();
  fit.converged = true;
  fit.iterations = 0;
  if (fit.sigma2 > 0.0) {
    Eigen::MatrixXd cov = fit.sigma2 * (X.transpose() * X).ldlt().solve(
                                           Eigen::MatrixXd::Identity(p, p));
    fit.se_beta = cov.diagonal().cwiseSqrt();
  } else {
    fit.se_beta = Eigen::VectorXd::Zero(p);
  }
  fit.subject_ids = data.subject_ids;
  fit.subjects.assign(data.subject_ids.size(), LmmSubjectEstimates{});
  (void)ds;
  return fit;
}

}  // namespace

LmmFit fit_lmm(const Dataset& ds, const LmmSpec& spec, int threads) {
  LmmData data = build_lmm_data(ds, spec);
  if (!spec.random_effects) return fit_ols(ds, spec, data);

  int p = data.p();

  // moment-based starting values from the OLS residual variance
  Eigen::MatrixXd Xall(data.n_total, p);
  Eigen::VectorXd yall(data.n_total);
  int at = 0;
  for (std::size_t i = 0; i < data.X.size(); ++i) {
    Xall.middleRows(at, data.X[i].rows()) = data.X[i];
    yall.segment(at, data.y[i].size()) = data.y[i];
    at += static_cast<int>(data.X[i].rows());
  }
  Eigen::VectorXd beta0 = (Xall.transpose() * Xall).ldlt().solve(Xall.transpose() * yall);
  double v = (yall - Xall * beta0).squaredNorm() / data.n_total;
  if (!(v > 0.0)) v = 1e-8;

  Eigen::VectorXd phi0(4);
  phi0 << 0.5 * std::log(0.5 * v), 0.0, 0.5 * std::log(0.25 * v), std::log(0.5 * v);

  // quasi-Newton on the profiled marginal likelihood; the beta block of the
  // score vanishes at the GLS solution, so the profiled gradient is the
  // variance-parameter block of the full score.
  auto profiled = [&](const Eigen::VectorXd& phi, Eigen::VectorXd* grad) {
    Eigen::Vector3d lam = phi.head<3>();
    double log_s2 = phi(3);
    if (phi.maxCoeff() > 20.0 || phi.minCoeff() < -40.0)
      return -std::numeric_limits<double>::infinity();
    Eigen::VectorXd beta = gls_beta(data, lam, log_s2, nullptr);
    Eigen::VectorXd theta(p + 4);
    theta << beta, lam, log_s2;
    if (!grad) return lmm_loglik(data, theta, threads);
    double ll;
    Eigen::VectorXd full;
    accumulate(data, theta, threads, true, &ll, &full);
    *grad = full.tail(4);
    return ll;
  };

  OptimOptions opts;
  opts.max_iter = 500;
  opts.rel_tol = 1e-9;
  opts.grad_tol = 1e-6;
  OptimResult res = bfgs_maximize(profiled, phi0, opts);
  if (!res.converged && res.grad_norm > 1e-3)
    throw ConvergenceError("lmm: optimizer did not converge (grad norm " +
                           std::to_string(res.grad_norm) + ")");

  Eigen::Vector3d lam = res.x.head<3>();
  double log_s2 = res.x(3);
  Eigen::MatrixXd info;
  Eigen::VectorXd beta = gls_beta(data, lam, log_s2, &info);

  LmmFit fit;
  fit.spec = spec;
  fit.coef_names = data.coef_names;
  fit.beta = beta;
  fit.Q = chol_to_q(lam);
  fit.sigma2 = std::exp(log_s2);
  fit.loglik = res.f;
  fit.iterations = res.iterations;
  fit.converged = true;
  fit.trace = res.trace;
  fit.se_beta =
      info.ldlt().solve(Eigen::MatrixXd::Identity(p, p)).diagonal().cwiseSqrt();
  fit.subject_ids = data.subject_ids;

  Eigen::Matrix2d Qinv = fit.Q.inverse();
  for (std::size_t i = 0; i < data.X.size(); ++i) {
    const Eigen::MatrixXd& Z = data.Z[i];
    Eigen::Vector2d zr = Z.transpose() * (data.y[i] - data.X[i] * beta) / fit.sigma2;
    Eigen::Matrix2d A = Z.transpose() * Z / fit.sigma2 + Qinv;
    LmmSubjectEstimates est;
    est.cov = A.inverse();
    est.mode = est.cov * zr;
    fit.subjects.push_back(est);
  }
  return fit;
}

namespace {

// reconstruct the fitted term list; dummy levels are recovered from the
// "name=lvlK" coefficient names
std::vector<Term> terms_from_fit(const LmmFit& fit) {
  std::vector<Term> tms;
  tms.push_back({Term::Intercept, "", 0, 0});
  for (int q = 1; q <= fit.spec.time_degree; ++q)
    tms.push_back({Term::TimePow, "", 0, q});
  for (const auto& name : fit.spec.covariates) {
    bool any_dummy = false;
    for (const auto& cn : fit.coef_names) {
      auto pos = cn.find("=lvl");
      if (pos != std::string::npos && cn.substr(0, pos) == name) {
        tms.push_back({Term::Dummy, name, std::stoi(cn.substr(pos + 4)), 1});
        any_dummy = true;
      }
    }
    if (!any_dummy) tms.push_back({Term::Covariate, name, 0, 1});
  }
  return tms;
}

}  // namespace

LmmSubjectEstimates eb_posterior(const LmmFit& fit, const SubjectHistory& h) {
  if (!fit.spec.random_effects) return LmmSubjectEstimates{};
  int p = static_cast<int>(fit.beta.size());
  int ni = static_cast<int>(h.meas_times.size());
  if (ni == 0) return LmmSubjectEstimates{};
  std::vector<Term> tms = terms_from_fit(fit);
  Eigen::MatrixXd X(ni, p), Z(ni, 2);
  Eigen::VectorXd y(ni);
  for (int k = 0; k < ni; ++k) {
    double t = h.meas_times[k];
    X.row(k) = design_value(tms, h, t);
    Z(k, 0) = 1.0;
    Z(k, 1) = t;
    y(k) = h.meas_values[k];
  }
  Eigen::Matrix2d Qinv = fit.Q.inverse();
  Eigen::Vector2d zr = Z.transpose() * (y - X * fit.beta) / fit.sigma2;
  Eigen::Matrix2d A = Z.transpose() * Z / fit.sigma2 + Qinv;
  LmmSubjectEstimates est;
  est.cov = A.inverse();
  est.mode = est.cov * zr;
  return est;
}

namespace {

Eigen::Vector2d subject_mode(const LmmFit& fit, const SubjectHistory& h) {
  for (std::size_t i = 0; i < fit.subject_ids.size(); ++i)
    if (fit.subject_ids[i] == h.id) return fit.subjects[i].mode;
  return eb_posterior(fit, h).mode;
}

}  // namespace

double trajectory_value_at(const std::vector<Term>& terms,
                           const Eigen::VectorXd& beta,
                           const Eigen::Vector2d& b, const SubjectHistory& h,
                           double t) {
  return design_value(terms, h, t).dot(beta) + b(0) + b(1) * t;
}

double trajectory_slope_at(const std::vector<Term>& terms,
                           const Eigen::VectorXd& beta,
                           const Eigen::Vector2d& b, const SubjectHistory& h,
                           double t) {
  return design_slope(terms, h, t).dot(beta) + b(1);
}

double trajectory_value(const LmmFit& fit, const SubjectHistory& h, double t) {
  return trajectory_value_at(terms_from_fit(fit), fit.beta, subject_mode(fit, h),
                             h, t);
}

double trajectory_slope(const LmmFit& fit, const SubjectHistory& h, double t) {
  return trajectory_slope_at(terms_from_fit(fit), fit.beta, subject_mode(fit, h),
                             h, t);
}

}  // namespace jointhaz

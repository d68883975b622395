#include "jointhaz/joint.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "jointhaz/errors.hpp"
#include "jointhaz/optim.hpp"
#include "jointhaz/quad.hpp"
#include "jointhaz/threading.hpp"

namespace jointhaz {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kExpCap = 500.0;  // exponent clamp keeps grid sums finite

double logsumexp(const Eigen::VectorXd& v) {
  double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

}  // namespace

std::vector<int> JointLayout::free_indices() const {
  std::vector<int> idx;
  for (int i = 0; i < dim(); ++i) {
    if (fix_alpha_zero && i >= alpha_off() && i < alpha_off() + K) continue;
    idx.push_back(i);
  }
  return idx;
}

Eigen::VectorXd JointFit::pack_theta() const {
  JointLayout lay;
  lay.p = static_cast<int>(beta.size());
  lay.q = static_cast<int>(gamma.size());
  lay.K = static_cast<int>(alpha.size());
  lay.m = static_cast<int>(omega.size());
  Eigen::VectorXd theta(lay.dim());
  theta.segment(lay.beta_off(), lay.p) = beta;
  theta.segment<3>(lay.lam_off()) = q_to_chol(Q);
  theta(lay.lsig_off()) = std::log(sigma2);
  theta.segment(lay.gamma_off(), lay.q) = gamma;
  theta.segment(lay.alpha_off(), lay.K) = alpha;
  theta.segment(lay.omega_off(), lay.m) = omega;
  return theta;
}

double aic(const JointFit& fit) {
  return -2.0 * fit.loglik + 2.0 * fit.n_free_params;
}

// ---------------------------------------------------------------------------
// prepared per-subject quantities

namespace {

struct SubjectCache {
  std::string id;
  double t0 = 0.0, T = 0.0;
  int delta = 0;
  // longitudinal block (rows with observed outcome)
  Eigen::MatrixXd X, Z;
  Eigen::VectorXd y;
  double yy = 0.0;                // cached squared norm of y (unused but cheap)
  Eigen::Matrix2d ZtZ;
  // hazard nodes over [t0, T], Gauss-Legendre per covariate segment
  Eigen::VectorXd w, s;           // n_g
  Eigen::MatrixXd B, Xs;          // n_g x m, n_g x q
  std::vector<Eigen::MatrixXd> A;   // K of n_g x p (fixed functional design)
  std::vector<Eigen::MatrixXd> Ra;  // K of n_g x 2 (random functional design)
  Eigen::RowVectorXd B_T, Xs_T;
  std::vector<Eigen::RowVectorXd> A_T;
  std::vector<Eigen::RowVector2d> Ra_T;
};

struct Params {
  Eigen::VectorXd beta;
  Eigen::Vector3d lam;
  double log_s2 = 0.0;
  Eigen::VectorXd gamma, alpha, omega;
  // derived
  double sigma2 = 1.0;
  Eigen::Matrix2d Q, Qinv;
  double logdetQ = 0.0;
};

// E-step output for one subject at fixed parameters
struct SubjectMoments {
  double loglik = 0.0;
  Eigen::Vector2d mode = Eigen::Vector2d::Zero();
  Eigen::Matrix2d pcov = Eigen::Matrix2d::Identity();
  Eigen::Vector2d Eb = Eigen::Vector2d::Zero();
  Eigen::Matrix2d Ebb = Eigen::Matrix2d::Zero();
  double Erss = 0.0;              // E||y - X beta - Z b||^2
  Eigen::VectorXd E1;             // n_g   E[h_g(b)]
  Eigen::MatrixXd E2;             // n_g x 2  E[h_g(b) b]
  Eigen::MatrixXd E3;             // n_g x 3  E[h_g b0^2, h_g b0 b1, h_g b1^2]
  Eigen::MatrixXd bnodes;         // n_q x 2 grid points
  Eigen::VectorXd pw;             // n_q normalized posterior weights
  bool finite = true;
};

}  // namespace

// ---------------------------------------------------------------------------

struct JointModel::Impl {
  JointSpec spec;
  JointLayout lay;
  BSplineBasis basis;
  std::vector<Term> long_terms, surv_terms;
  std::vector<std::string> beta_nm, gamma_nm;
  std::vector<SubjectCache> subjects;
  Dataset ds_copy;  // for the LMM / Cox initializers
  std::vector<SubjectHistory> histories_;
  int n_total_meas = 0;
  int n_events = 0;
  mutable std::vector<Eigen::Vector2d> warm;  // per-subject mode warm starts

  Impl(const Dataset& ds, JointSpec s) : spec(std::move(s)), ds_copy(ds) {
    long_terms = expand_terms(ds.schema, spec.lmm.covariates,
                              spec.lmm.time_degree, true);
    surv_terms = expand_terms(ds.schema, spec.surv_covariates, 0, false);
    beta_nm = term_names(long_terms);
    gamma_nm = term_names(surv_terms);

    lay.p = static_cast<int>(long_terms.size());
    lay.q = static_cast<int>(surv_terms.size());
    lay.K = spec.assoc.n_alpha();
    lay.fix_alpha_zero = spec.fix_alpha_zero;

    std::vector<double> event_times;
    for (int r = 0; r < ds.n_rows(); ++r)
      if (ds.event[r] == 1) event_times.push_back(ds.tstop[r]);
    n_events = static_cast<int>(event_times.size());
    basis = BSplineBasis::from_event_quantiles(event_times,
                                               spec.baseline.interior_knots,
                                               spec.baseline.degree, 0.0,
                                               ds.max_tstop());
    lay.m = basis.dim();

    histories_ = extract_histories(ds, spec.lmm.outcome);
    for (int i = 0; i < ds.n_subjects(); ++i)
      subjects.push_back(build_cache(histories_[i]));
    warm.assign(subjects.size(), Eigen::Vector2d::Zero());
    for (const auto& c : subjects) n_total_meas += static_cast<int>(c.y.size());
  }

  // fitting (unlike pure likelihood evaluation) needs events; otherwise
  // gamma, alpha and the baseline coefficients are non-identified
  void require_identified() const {
    if (n_events == 0)
      throw DataError(
          "joint: zero events; gamma, alpha and baseline coefficients are "
          "non-identified");
  }

  const SubjectHistory& history(int i) const { return histories_[i]; }

  SubjectCache build_cache(const SubjectHistory& h) const {
    SubjectCache c;
    c.id = h.id;
    c.t0 = h.entry_time;
    c.T = h.exit_time;
    c.delta = h.event;

    int ni = static_cast<int>(h.meas_times.size());
    c.X.resize(ni, lay.p);
    c.Z.resize(ni, 2);
    c.y.resize(ni);
    for (int k = 0; k < ni; ++k) {
      double t = h.meas_times[k];
      c.X.row(k) = design_value(long_terms, h, t);
      c.Z(k, 0) = 1.0;
      c.Z(k, 1) = t;
      c.y(k) = h.meas_values[k];
    }
    c.yy = c.y.squaredNorm();
    c.ZtZ = c.Z.transpose() * c.Z;

    // hazard segments: covariate jump points, plus lag kinks for the lagged
    // association (the shifted path jumps at tstart + c)
    std::vector<double> cuts;
    cuts.push_back(c.t0);
    for (double t : h.step_times)
      if (t > c.t0 && t < c.T) cuts.push_back(t);
    if (spec.assoc.kind == AssociationSpec::Lagged) {
      double cl = spec.assoc.lag;
      if (cl > c.t0 && cl < c.T) cuts.push_back(cl);
      for (double t : h.step_times) {
        double ts = t + cl;
        if (ts > c.t0 && ts < c.T) cuts.push_back(ts);
      }
    }
    cuts.push_back(c.T);
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

    const QuadRule& gl = gauss_legendre(spec.gl_nodes);
    int n_seg = static_cast<int>(cuts.size()) - 1;
    int n_g = n_seg * spec.gl_nodes;
    c.w.resize(n_g);
    c.s.resize(n_g);
    c.B.resize(n_g, lay.m);
    c.Xs.resize(n_g, lay.q);
    c.A.assign(lay.K, Eigen::MatrixXd(n_g, lay.p));
    c.Ra.assign(lay.K, Eigen::MatrixXd(n_g, 2));

    int at = 0;
    for (int seg = 0; seg < n_seg; ++seg) {
      QuadRule r = map_to_interval(gl, cuts[seg], cuts[seg + 1]);
      for (int g = 0; g < spec.gl_nodes; ++g, ++at) {
        double t = r.nodes(g);
        c.w(at) = r.weights(g);
        c.s(at) = t;
        c.B.row(at) = basis.eval(t).transpose();
        c.Xs.row(at) = design_value(surv_terms, h, t);
        fill_functionals(h, t, at, c);
      }
    }
    c.B_T = basis.eval(c.T).transpose();
    c.Xs_T = design_value(surv_terms, h, c.T);
    c.A_T.assign(lay.K, Eigen::RowVectorXd(lay.p));
    c.Ra_T.assign(lay.K, Eigen::RowVector2d::Zero());
    fill_functionals_at(
        h, c.T, [&](int k) -> Eigen::RowVectorXd& { return c.A_T[k]; },
        [&](int k) -> Eigen::RowVector2d& { return c.Ra_T[k]; });
    return c;
  }

  void fill_functionals(const SubjectHistory& h, double t, int row,
                        SubjectCache& c) const {
    fill_functionals_at(
        h, t, [&](int k) { return c.A[k].row(row); },
        [&](int k) { return c.Ra[k].row(row); });
  }

  template <class ARow, class RRow>
  void fill_functionals_at(const SubjectHistory& h, double t, ARow arow,
                           RRow rrow) const {
    switch (spec.assoc.kind) {
      case AssociationSpec::Value:
        arow(0) = design_value(long_terms, h, t);
        rrow(0) << 1.0, t;
        break;
      case AssociationSpec::Slope:
        arow(0) = design_slope(long_terms, h, t);
        rrow(0) << 0.0, 1.0;
        break;
      case AssociationSpec::ValueAndSlope:
        arow(0) = design_value(long_terms, h, t);
        rrow(0) << 1.0, t;
        arow(1) = design_slope(long_terms, h, t);
        rrow(1) << 0.0, 1.0;
        break;
      case AssociationSpec::Cumulative:
        arow(0) = design_integral(long_terms, h, t);
        rrow(0) << t, 0.5 * t * t;
        break;
      case AssociationSpec::Lagged: {
        double tl = std::max(t - spec.assoc.lag, 0.0);
        arow(0) = design_value(long_terms, h, tl);
        rrow(0) << 1.0, tl;
        break;
      }
    }
  }

  Params unpack(const Eigen::VectorXd& theta) const {
    Params pr;
    pr.beta = theta.segment(lay.beta_off(), lay.p);
    pr.lam = theta.segment<3>(lay.lam_off());
    pr.log_s2 = theta(lay.lsig_off());
    pr.gamma = theta.segment(lay.gamma_off(), lay.q);
    pr.alpha = theta.segment(lay.alpha_off(), lay.K);
    pr.omega = theta.segment(lay.omega_off(), lay.m);
    pr.sigma2 = std::exp(pr.log_s2);
    pr.Q = chol_to_q(pr.lam);
    double det = pr.Q(0, 0) * pr.Q(1, 1) - pr.Q(0, 1) * pr.Q(1, 0);
    pr.Qinv << pr.Q(1, 1), -pr.Q(0, 1), -pr.Q(1, 0), pr.Q(0, 0);
    pr.Qinv /= det;
    pr.logdetQ = std::log(det);
    return pr;
  }

  // fixed part of the log-hazard at the cached nodes, and the random-effect
  // loading a(s) = sum_k alpha_k Ra_k(s)
  void hazard_linear(const SubjectCache& c, const Params& pr, Eigen::VectorXd* cvec,
                     Eigen::MatrixXd* avec, double* cT, Eigen::RowVector2d* aT) const {
    *cvec = c.B * pr.omega;
    if (lay.q > 0) *cvec += c.Xs * pr.gamma;
    *avec = Eigen::MatrixXd::Zero(c.s.size(), 2);
    for (int k = 0; k < lay.K; ++k) {
      *cvec += pr.alpha(k) * (c.A[k] * pr.beta);
      *avec += pr.alpha(k) * c.Ra[k];
    }
    *cT = c.B_T.dot(pr.omega);
    if (lay.q > 0) *cT += c.Xs_T.dot(pr.gamma);
    aT->setZero();
    for (int k = 0; k < lay.K; ++k) {
      *cT += pr.alpha(k) * c.A_T[k].dot(pr.beta);
      *aT += pr.alpha(k) * c.Ra_T[k];
    }
  }

  // complete-data log density of (y_i, T_i, delta_i, b); concave in b
  // mode search by Newton with halving
  bool find_mode(const SubjectCache& c, const Params& pr,
                 const Eigen::VectorXd& cvec, const Eigen::MatrixXd& avec,
                 double cT, const Eigen::RowVector2d& aT, Eigen::Vector2d* mode,
                 Eigen::Matrix2d* neg_hess) const {
    Eigen::VectorXd r0 = c.y - c.X * pr.beta;
    Eigen::Vector2d v = c.Z.transpose() * r0;
    auto gfun = [&](const Eigen::Vector2d& b, Eigen::Vector2d* grad,
                    Eigen::Matrix2d* hess) -> double {
      Eigen::ArrayXd e = (cvec + avec * b.matrix()).array();
      if ((e > kExpCap).any()) return kNegInf;
      Eigen::ArrayXd hval = e.exp();
      double integral = (c.w.array() * hval).sum();
      double rss = r0.squaredNorm() - 2.0 * b.dot(v) + b.dot(c.ZtZ * b);
      double g = -0.5 * rss / pr.sigma2 + c.delta * (cT + aT.dot(b)) - integral -
                 0.5 * b.dot(pr.Qinv * b);
      if (grad) {
        Eigen::Vector2d wh_a = avec.transpose() * (c.w.array() * hval).matrix();
        *grad = (v - c.ZtZ * b) / pr.sigma2 + c.delta * aT.transpose() - wh_a -
                pr.Qinv * b;
      }
      if (hess) {
        Eigen::Matrix2d H = Eigen::Matrix2d::Zero();
        Eigen::ArrayXd wh = c.w.array() * hval;
        for (int g2 = 0; g2 < avec.rows(); ++g2)
          H += wh(g2) * (avec.row(g2).transpose() * avec.row(g2));
        *hess = -c.ZtZ / pr.sigma2 - H - pr.Qinv;
      }
      return g;
    };

    Eigen::Vector2d b = *mode;
    double g = gfun(b, nullptr, nullptr);
    if (!std::isfinite(g)) {
      b.setZero();
      g = gfun(b, nullptr, nullptr);
      if (!std::isfinite(g)) return false;
    }
    Eigen::Vector2d grad;
    Eigen::Matrix2d hess;
    for (int it = 0; it < 100; ++it) {
      gfun(b, &grad, &hess);
      Eigen::Vector2d step = (-hess).ldlt().solve(grad);
      double scale = 1.0;
      Eigen::Vector2d bn = b;
      double gn = kNegInf;
      for (int hstep = 0; hstep < 40; ++hstep) {
        bn = b + scale * step;
        gn = gfun(bn, nullptr, nullptr);
        if (std::isfinite(gn) && gn >= g - 1e-13) break;
        scale *= 0.5;
      }
      double move = (bn - b).norm();
      b = bn;
      g = gn;
      if (move < 1e-11) break;
    }
    gfun(b, &grad, &hess);
    *mode = b;
    *neg_hess = -hess;
    return std::isfinite(g);
  }

  // adaptive GH grid; fills the observed loglik and (optionally) the
  // posterior moments used by the M-step and the analytic score
  bool estep_subject(int i, const Params& pr, int gh, bool want_moments,
                     SubjectMoments* out) const {
    const SubjectCache& c = subjects[i];
    Eigen::VectorXd cvec;
    Eigen::MatrixXd avec;
    double cT;
    Eigen::RowVector2d aT;
    hazard_linear(c, pr, &cvec, &avec, &cT, &aT);

    Eigen::Vector2d mode = warm[i];
    Eigen::Matrix2d neg_hess;
    if (!find_mode(c, pr, cvec, avec, cT, aT, &mode, &neg_hess)) {
      out->finite = false;
      return false;
    }
    warm[i] = mode;

    Eigen::Matrix2d pcov = neg_hess.inverse();
    Eigen::LLT<Eigen::Matrix2d> llt(pcov);
    if (llt.info() != Eigen::Success) {
      // curvature collapsed; nudge to a small spherical covariance
      pcov = Eigen::Matrix2d::Identity() * 1e-8;
      llt.compute(pcov);
    }
    Eigen::Matrix2d Lp = llt.matrixL();

    const QuadRule& ghr = gauss_hermite(gh);
    int n1 = gh, nq = gh * gh;
    Eigen::MatrixXd bnodes(nq, 2);
    Eigen::VectorXd base_lw(nq);  // log w_k w_l + |u|^2
    const double sqrt2 = 1.4142135623730950488;
    for (int a = 0; a < n1; ++a) {
      for (int b2 = 0; b2 < n1; ++b2) {
        int idx = a * n1 + b2;
        Eigen::Vector2d u(ghr.nodes(a), ghr.nodes(b2));
        bnodes.row(idx) = (mode + sqrt2 * (Lp * u)).transpose();
        base_lw(idx) = std::log(ghr.weights(a)) + std::log(ghr.weights(b2)) +
                       u.squaredNorm();
      }
    }

    // g(b) at all grid nodes
    Eigen::VectorXd r0 = c.y - c.X * pr.beta;
    Eigen::Vector2d v = c.Z.transpose() * r0;
    double q0 = r0.squaredNorm();
    int ni = static_cast<int>(c.y.size());

    Eigen::MatrixXd expo = (cvec.replicate(1, nq) + avec * bnodes.transpose());
    Eigen::MatrixXd H = expo.array().min(kExpCap).exp().matrix();  // n_g x nq
    Eigen::VectorXd integrals = H.transpose() * c.w;               // nq

    Eigen::VectorXd gvals(nq);
    for (int n = 0; n < nq; ++n) {
      Eigen::Vector2d b = bnodes.row(n).transpose();
      double rss = q0 - 2.0 * b.dot(v) + b.dot(c.ZtZ * b);
      gvals(n) = -0.5 * ni * (kLog2Pi + pr.log_s2) - 0.5 * rss / pr.sigma2 +
                 c.delta * (cT + aT.dot(b)) - integrals(n) - 0.5 * b.dot(pr.Qinv * b) -
                 kLog2Pi * 0.5 * 2.0 - 0.5 * pr.logdetQ;
    }

    Eigen::VectorXd lw = base_lw + gvals;
    double lse = logsumexp(lw);
    double logdetL = std::log(Lp(0, 0)) + std::log(Lp(1, 1));
    out->loglik = std::log(2.0) + logdetL + lse;
    out->mode = mode;
    out->pcov = pcov;
    if (!std::isfinite(out->loglik)) {
      out->finite = false;
      return false;
    }
    if (!want_moments) return true;

    Eigen::VectorXd pw = (lw.array() - lse).exp().matrix();  // sums to 1
    out->bnodes = std::move(bnodes);
    out->pw = pw;
    out->Eb = out->bnodes.transpose() * pw;
    Eigen::Matrix2d Ebb = Eigen::Matrix2d::Zero();
    for (int n = 0; n < nq; ++n) {
      Eigen::Vector2d b = out->bnodes.row(n).transpose();
      Ebb += pw(n) * (b * b.transpose());
    }
    out->Ebb = Ebb;
    out->Erss = q0 - 2.0 * out->Eb.dot(v) + (c.ZtZ * Ebb).trace();

    out->E1 = H * pw;
    Eigen::MatrixXd pb = out->bnodes.array().colwise() * pw.array();  // nq x 2
    out->E2 = H * pb;                                                 // n_g x 2
    Eigen::MatrixXd bsq(nq, 3);
    bsq.col(0) = out->bnodes.col(0).array().square();
    bsq.col(1) = (out->bnodes.col(0).array() * out->bnodes.col(1).array());
    bsq.col(2) = out->bnodes.col(1).array().square();
    out->E3 = H * (bsq.array().colwise() * pw.array()).matrix();
    return true;
  }
};

// ---------------------------------------------------------------------------

JointModel::JointModel(const Dataset& ds, JointSpec spec)
    : impl_(new Impl(ds, std::move(spec))) {}

JointModel::~JointModel() { delete impl_; }

const JointLayout& JointModel::layout() const { return impl_->lay; }
const BSplineBasis& JointModel::basis() const { return impl_->basis; }
const std::vector<std::string>& JointModel::beta_names() const {
  return impl_->beta_nm;
}
const std::vector<std::string>& JointModel::gamma_names() const {
  return impl_->gamma_nm;
}
int JointModel::n_subjects() const {
  return static_cast<int>(impl_->subjects.size());
}

double JointModel::subject_loglik(const Eigen::VectorXd& theta, int subject,
                                  int gh_override) const {
  Params pr = impl_->unpack(theta);
  int gh = gh_override > 0 ? gh_override : impl_->spec.gh_nodes;
  SubjectMoments mom;
  if (!impl_->estep_subject(subject, pr, gh, false, &mom) || !mom.finite)
    throw ConvergenceError("joint: quadrature non-finite (overflow) for subject " +
                           impl_->subjects[subject].id);
  return mom.loglik;
}

double JointModel::loglik(const Eigen::VectorXd& theta, int threads) const {
  Params pr = impl_->unpack(theta);
  int n = n_subjects();
  std::vector<double> lls(n);
  std::vector<char> ok(n, 1);
  parallel_for(n, threads, [&](int i) {
    SubjectMoments mom;
    ok[i] = impl_->estep_subject(i, pr, impl_->spec.gh_nodes, false, &mom) ? 1 : 0;
    lls[i] = mom.loglik;
  });
  for (int i = 0; i < n; ++i)
    if (!ok[i]) return kNegInf;
  return neumaier_sum(lls);
}

namespace {

// gradient of the complete-data log-likelihood expectation (Fisher identity)
Eigen::VectorXd subject_score(const SubjectCache& c, const JointLayout& lay,
                              const Params& pr, const SubjectMoments& mom) {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(lay.dim());
  // longitudinal beta part
  Eigen::VectorXd r0 = c.y - c.X * pr.beta;
  g.segment(lay.beta_off(), lay.p) =
      c.X.transpose() * (r0 - c.Z * mom.Eb) / pr.sigma2;
  // survival beta part via the association
  for (int k = 0; k < lay.K; ++k) {
    Eigen::VectorXd surv = Eigen::VectorXd::Zero(lay.p);
    if (c.delta) surv += c.A_T[k].transpose();
    surv -= c.A[k].transpose() * (c.w.array() * mom.E1.array()).matrix();
    g.segment(lay.beta_off(), lay.p) += pr.alpha(k) * surv;
  }
  // Q Cholesky block
  Eigen::Matrix2d L;
  L << std::exp(pr.lam(0)), 0.0, pr.lam(1), std::exp(pr.lam(2));
  Eigen::Matrix2d dL[3];
  dL[0] << L(0, 0), 0, 0, 0;
  dL[1] << 0, 0, 1, 0;
  dL[2] << 0, 0, 0, L(1, 1);
  Eigen::Matrix2d core =
      pr.Qinv * mom.Ebb * pr.Qinv - pr.Qinv;  // d/dQ of E[log N(b|0,Q)] * 2
  for (int k = 0; k < 3; ++k) {
    Eigen::Matrix2d dQ = dL[k] * L.transpose() + L * dL[k].transpose();
    g(lay.lam_off() + k) = 0.5 * (core * dQ).trace();
  }
  // log sigma2
  int ni = static_cast<int>(c.y.size());
  g(lay.lsig_off()) = -0.5 * ni + 0.5 * mom.Erss / pr.sigma2;
  // gamma
  if (lay.q > 0) {
    Eigen::VectorXd gg = Eigen::VectorXd::Zero(lay.q);
    if (c.delta) gg += c.Xs_T.transpose();
    gg -= c.Xs.transpose() * (c.w.array() * mom.E1.array()).matrix();
    g.segment(lay.gamma_off(), lay.q) = gg;
  }
  // alpha
  for (int k = 0; k < lay.K; ++k) {
    double ga = 0.0;
    if (c.delta) ga += c.A_T[k].dot(pr.beta) + c.Ra_T[k].dot(mom.Eb);
    Eigen::VectorXd fk = c.A[k] * pr.beta;  // fixed functional at nodes
    ga -= (c.w.array() * (mom.E1.array() * fk.array() +
                          (c.Ra[k].array() * mom.E2.array()).rowwise().sum()))
              .sum();
    g(lay.alpha_off() + k) = ga;
  }
  // omega
  Eigen::VectorXd go = Eigen::VectorXd::Zero(lay.m);
  if (c.delta) go += c.B_T.transpose();
  go -= c.B.transpose() * (c.w.array() * mom.E1.array()).matrix();
  g.segment(lay.omega_off(), lay.m) = go;
  return g;
}

}  // namespace

Eigen::VectorXd JointModel::score(const Eigen::VectorXd& theta, int threads) const {
  Params pr = impl_->unpack(theta);
  int n = n_subjects();
  std::vector<Eigen::VectorXd> grads(n);
  std::vector<char> ok(n, 1);
  parallel_for(n, threads, [&](int i) {
    SubjectMoments mom;
    ok[i] = impl_->estep_subject(i, pr, impl_->spec.gh_nodes, true, &mom) ? 1 : 0;
    grads[i] = ok[i] ? subject_score(impl_->subjects[i], impl_->lay, pr, mom)
                     : Eigen::VectorXd::Zero(impl_->lay.dim());
  });
  Eigen::VectorXd g = Eigen::VectorXd::Zero(impl_->lay.dim());
  for (const auto& gi : grads) g += gi;
  return g;
}

// ---------------------------------------------------------------------------
// initializer: LMM + Cox-without-outcome + log-baseline fit against the
// exposure likelihood (Poisson trick on subject intervals, gamma fixed)

Eigen::VectorXd JointModel::initial_theta(int threads) const {
  const Impl& im = *impl_;
  im.require_identified();
  LmmFit lmm = fit_lmm(im.ds_copy, im.spec.lmm, threads);

  Eigen::VectorXd gamma0 = Eigen::VectorXd::Zero(im.lay.q);
  if (im.lay.q > 0) {
    CoxSpec cs;
    cs.covariates = im.spec.surv_covariates;
    CoxFit cox = fit_cox(im.ds_copy, cs, threads);
    gamma0 = cox.gamma;
  }

  // constant start at the overall event rate, then concave Newton in omega
  double exposure = 0.0;
  int events = 0;
  for (const auto& c : im.subjects) {
    exposure += c.T - c.t0;
    events += c.delta;
  }
  Eigen::VectorXd omega =
      Eigen::VectorXd::Constant(im.lay.m, std::log(events / exposure));

  auto eval = [&](const Eigen::VectorXd& om, Eigen::VectorXd* grad,
                  Eigen::MatrixXd* hess) {
    double ll = 0.0;
    if (grad) grad->setZero(im.lay.m);
    if (hess) hess->setZero(im.lay.m, im.lay.m);
    for (const auto& c : im.subjects) {
      Eigen::VectorXd eta = c.B * om;
      if (im.lay.q > 0) eta += c.Xs * gamma0;
      Eigen::ArrayXd hval = eta.array().min(kExpCap).exp();
      Eigen::ArrayXd wh = c.w.array() * hval;
      ll -= wh.sum();
      if (c.delta) ll += c.B_T.dot(om) + (im.lay.q > 0 ? c.Xs_T.dot(gamma0) : 0.0);
      if (grad) {
        *grad -= c.B.transpose() * wh.matrix();
        if (c.delta) *grad += c.B_T.transpose();
      }
      if (hess) *hess -= c.B.transpose() * wh.matrix().asDiagonal() * c.B;
    }
    return ll;
  };

  double ll = eval(omega, nullptr, nullptr);
  for (int it = 0; it < 50; ++it) {
    Eigen::VectorXd grad(im.lay.m);
    Eigen::MatrixXd hess(im.lay.m, im.lay.m);
    eval(omega, &grad, &hess);
    Eigen::MatrixXd nh = -hess;
    nh.diagonal().array() += 1e-10;  // guard basis tails with no exposure mass
    Eigen::VectorXd step = nh.ldlt().solve(grad);
    double scale = 1.0;
    double ll_new = kNegInf;
    Eigen::VectorXd om_new;
    for (int hs = 0; hs < 40; ++hs) {
      om_new = omega + scale * step;
      ll_new = eval(om_new, nullptr, nullptr);
      if (std::isfinite(ll_new) && ll_new >= ll - 1e-12) break;
      scale *= 0.5;
    }
    double dll = ll_new - ll;
    omega = om_new;
    ll = ll_new;
    if (std::abs(dll) < 1e-9 * (1.0 + std::abs(ll))) break;
  }

  Eigen::VectorXd theta(im.lay.dim());
  theta.segment(im.lay.beta_off(), im.lay.p) = lmm.beta;
  theta.segment<3>(im.lay.lam_off()) = q_to_chol(lmm.Q);
  theta(im.lay.lsig_off()) = std::log(lmm.sigma2);
  theta.segment(im.lay.gamma_off(), im.lay.q) = gamma0;
  theta.segment(im.lay.alpha_off(), im.lay.K).setZero();
  theta.segment(im.lay.omega_off(), im.lay.m) = omega;
  return theta;
}

// ---------------------------------------------------------------------------
// EM with closed-form sigma2/Q updates and concave Newton blocks for
// (gamma, alpha, omega) and beta against the expected complete-data
// log-likelihood, then quasi-Newton polish on the observed likelihood.

namespace {

struct EstepStore {
  std::vector<SubjectMoments> mom;
  double loglik = 0.0;
  bool finite = true;
};

}  // namespace

JointFit JointModel::fit(int threads) const {
  Impl& im = *impl_;
  im.require_identified();
  const JointLayout& lay = im.lay;
  int n = n_subjects();

  Eigen::VectorXd theta = initial_theta(threads);
  std::vector<double> trace;

  auto run_estep = [&](const Eigen::VectorXd& th, EstepStore* store) {
    Params pr = im.unpack(th);
    store->mom.assign(n, SubjectMoments{});
    std::vector<char> ok(n, 1);
    parallel_for(n, threads, [&](int i) {
      ok[i] = im.estep_subject(i, pr, im.spec.gh_nodes, true, &store->mom[i]) ? 1 : 0;
    });
    store->finite = std::all_of(ok.begin(), ok.end(), [](char c) { return c; });
    std::vector<double> lls(n);
    for (int i = 0; i < n; ++i) lls[i] = store->mom[i].loglik;
    store->loglik = store->finite ? neumaier_sum(lls) : kNegInf;
  };

  // expected survival complete-data loglik on the stored posterior grids
  auto qsurv = [&](const EstepStore& st, const Params& pr) {
    std::vector<double> vals(n);
    parallel_for(n, threads, [&](int i) {
      const SubjectCache& c = im.subjects[i];
      const SubjectMoments& mm = st.mom[i];
      Eigen::VectorXd cvec;
      Eigen::MatrixXd avec;
      double cT;
      Eigen::RowVector2d aT;
      im.hazard_linear(c, pr, &cvec, &avec, &cT, &aT);
      Eigen::MatrixXd expo = cvec.replicate(1, mm.pw.size()) +
                             avec * mm.bnodes.transpose();
      Eigen::VectorXd ints =
          expo.array().min(kExpCap).exp().matrix().transpose() * c.w;
      double val = -ints.dot(mm.pw);
      if (c.delta) val += cT + aT.dot(mm.Eb);
      vals[i] = val;
    });
    return neumaier_sum(vals);
  };

  auto qlong = [&](const EstepStore& st, const Eigen::VectorXd& beta, double s2) {
    std::vector<double> vals(n);
    for (int i = 0; i < n; ++i) {
      const SubjectCache& c = im.subjects[i];
      const SubjectMoments& mm = st.mom[i];
      Eigen::VectorXd r0 = c.y - c.X * beta;
      double rss = r0.squaredNorm() - 2.0 * mm.Eb.dot(c.Z.transpose() * r0) +
                   (c.ZtZ * mm.Ebb).trace();
      vals[i] = -0.5 * (c.y.size() * (kLog2Pi + std::log(s2)) + rss / s2);
    }
    return neumaier_sum(vals);
  };

  EstepStore st;
  int em_iter = 0;
  int stable = 0;
  double prev_ll = kNegInf;

  for (em_iter = 0; em_iter < im.spec.max_em_iter; ++em_iter) {
    run_estep(theta, &st);
    if (!st.finite)
      throw ConvergenceError("joint: E-step quadrature overflow at iteration " +
                             std::to_string(em_iter));
    trace.push_back(st.loglik);
    if (em_iter > 0) {
      double rel = std::abs(st.loglik - prev_ll) / (1.0 + std::abs(st.loglik));
      stable = rel < 1e-8 ? stable + 1 : 0;
      if (stable >= 3) break;
    }
    prev_ll = st.loglik;

    Params pr = im.unpack(theta);

    // sigma2 and Q: exact conditional maximizers
    double rss_sum = 0.0;
    Eigen::Matrix2d Ebb_sum = Eigen::Matrix2d::Zero();
    for (int i = 0; i < n; ++i) {
      rss_sum += st.mom[i].Erss;
      Ebb_sum += st.mom[i].Ebb;
    }
    double s2_new = rss_sum / im.n_total_meas;
    Eigen::Matrix2d Q_new = Ebb_sum / n;
    Q_new = 0.5 * (Q_new + Q_new.transpose());
    theta(lay.lsig_off()) = std::log(s2_new);
    theta.segment<3>(lay.lam_off()) = q_to_chol(Q_new);
    pr = im.unpack(theta);

    // one Newton step for (gamma, alpha, omega) with step halving
    {
      int ds = lay.q + (lay.fix_alpha_zero ? 0 : lay.K) + lay.m;
      Eigen::VectorXd grad = Eigen::VectorXd::Zero(ds);
      Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(ds, ds);
      // index helpers inside the reduced block
      int goff = 0;
      int aoff = lay.q;
      int ooff = lay.q + (lay.fix_alpha_zero ? 0 : lay.K);

      std::vector<Eigen::VectorXd> grads(n);
      std::vector<Eigen::MatrixXd> hesss(n);
      parallel_for(n, threads, [&](int i) {
        const SubjectCache& c = im.subjects[i];
        const SubjectMoments& mm = st.mom[i];
        Eigen::VectorXd gi = Eigen::VectorXd::Zero(ds);
        Eigen::MatrixXd hi = Eigen::MatrixXd::Zero(ds, ds);
        int n_g = static_cast<int>(c.s.size());
        Eigen::VectorXd G0(ds);
        for (int g = 0; g < n_g; ++g) {
          G0.setZero();
          if (lay.q > 0) G0.segment(goff, lay.q) = c.Xs.row(g);
          if (!lay.fix_alpha_zero)
            for (int k = 0; k < lay.K; ++k)
              G0(aoff + k) = c.A[k].row(g).dot(pr.beta);
          G0.segment(ooff, lay.m) = c.B.row(g);
          double wg = c.w(g);
          double e1 = mm.E1(g);
          gi -= wg * e1 * G0;
          hi -= wg * e1 * (G0 * G0.transpose());
          if (!lay.fix_alpha_zero) {
            for (int k = 0; k < lay.K; ++k) {
              double sk = c.Ra[k].row(g).dot(mm.E2.row(g));
              gi(aoff + k) -= wg * sk;
              hi.col(aoff + k) -= wg * sk * G0;
              hi.row(aoff + k) -= wg * sk * G0.transpose();
              for (int l = 0; l < lay.K; ++l) {
                Eigen::Matrix2d E3m;
                E3m << mm.E3(g, 0), mm.E3(g, 1), mm.E3(g, 1), mm.E3(g, 2);
                Eigen::RowVector2d rk = c.Ra[k].row(g);
                Eigen::RowVector2d rl = c.Ra[l].row(g);
                hi(aoff + k, aoff + l) -= wg * (rk * E3m).dot(rl);
              }
            }
          }
        }
        if (c.delta) {
          G0.setZero();
          if (lay.q > 0) G0.segment(goff, lay.q) = c.Xs_T;
          if (!lay.fix_alpha_zero)
            for (int k = 0; k < lay.K; ++k)
              G0(aoff + k) = c.A_T[k].dot(pr.beta) + c.Ra_T[k].dot(mm.Eb);
          G0.segment(ooff, lay.m) = c.B_T;
          gi += G0;
        }
        grads[i] = std::move(gi);
        hesss[i] = std::move(hi);
      });
      for (int i = 0; i < n; ++i) {
        grad += grads[i];
        hess += hesss[i];
      }
      Eigen::MatrixXd nh = -hess;
      nh.diagonal().array() += 1e-10;
      Eigen::VectorXd step = nh.ldlt().solve(grad);

      double q0 = qsurv(st, pr);
      double scale = 1.0;
      for (int hs = 0; hs < 30; ++hs) {
        Eigen::VectorXd th_try = theta;
        if (lay.q > 0)
          th_try.segment(lay.gamma_off(), lay.q) += scale * step.segment(goff, lay.q);
        if (!lay.fix_alpha_zero)
          th_try.segment(lay.alpha_off(), lay.K) += scale * step.segment(aoff, lay.K);
        th_try.segment(lay.omega_off(), lay.m) += scale * step.segment(ooff, lay.m);
        Params pr_try = im.unpack(th_try);
        double q1 = qsurv(st, pr_try);
        if (std::isfinite(q1) && q1 >= q0 - 1e-12) {
          theta = th_try;
          break;
        }
        scale *= 0.5;
      }
      pr = im.unpack(theta);
    }

    // refresh E1 at the new hazard parameters, then one Newton step for beta
    {
      std::vector<Eigen::VectorXd> E1s(n);
      parallel_for(n, threads, [&](int i) {
        const SubjectCache& c = im.subjects[i];
        const SubjectMoments& mm = st.mom[i];
        Eigen::VectorXd cvec;
        Eigen::MatrixXd avec;
        double cT;
        Eigen::RowVector2d aT;
        im.hazard_linear(c, pr, &cvec, &avec, &cT, &aT);
        Eigen::MatrixXd expo = cvec.replicate(1, mm.pw.size()) +
                               avec * mm.bnodes.transpose();
        E1s[i] = expo.array().min(kExpCap).exp().matrix() * mm.pw;
      });

      Eigen::VectorXd grad = Eigen::VectorXd::Zero(lay.p);
      Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(lay.p, lay.p);
      for (int i = 0; i < n; ++i) {
        const SubjectCache& c = im.subjects[i];
        const SubjectMoments& mm = st.mom[i];
        Eigen::VectorXd r0 = c.y - c.X * pr.beta;
        grad += c.X.transpose() * (r0 - c.Z * mm.Eb) / pr.sigma2;
        hess -= c.X.transpose() * c.X / pr.sigma2;
        for (int k = 0; k < lay.K; ++k) {
          double ak = pr.alpha(k);
          if (ak == 0.0) continue;
          if (c.delta) grad += ak * c.A_T[k].transpose();
          Eigen::ArrayXd we1 = c.w.array() * E1s[i].array();
          grad -= ak * (c.A[k].transpose() * we1.matrix());
          for (int g = 0; g < c.s.size(); ++g)
            hess -= ak * ak * we1(g) *
                    (c.A[k].row(g).transpose() * c.A[k].row(g));
        }
      }
      Eigen::MatrixXd nh = -hess;
      nh.diagonal().array() += 1e-12;
      Eigen::VectorXd step = nh.ldlt().solve(grad);

      double q0 = qlong(st, pr.beta, pr.sigma2) + qsurv(st, pr);
      double scale = 1.0;
      for (int hs = 0; hs < 30; ++hs) {
        Eigen::VectorXd th_try = theta;
        th_try.segment(lay.beta_off(), lay.p) += scale * step;
        Params pr_try = im.unpack(th_try);
        double q1 = qlong(st, pr_try.beta, pr_try.sigma2) + qsurv(st, pr_try);
        if (std::isfinite(q1) && q1 >= q0 - 1e-12) {
          theta = th_try;
          break;
        }
        scale *= 0.5;
      }
    }
  }

  // direct quasi-Newton polish on the observed log-likelihood
  std::vector<int> free_idx = lay.free_indices();
  int nf = static_cast<int>(free_idx.size());
  Eigen::VectorXd x0(nf);
  for (int j = 0; j < nf; ++j) x0(j) = theta(free_idx[j]);

  auto to_full = [&](const Eigen::VectorXd& x) {
    Eigen::VectorXd th = theta;
    for (int j = 0; j < nf; ++j) th(free_idx[j]) = x(j);
    return th;
  };

  Objective obj = [&](const Eigen::VectorXd& x, Eigen::VectorXd* grad) {
    Eigen::VectorXd th = to_full(x);
    if (!grad) return loglik(th, threads);
    Params pr = im.unpack(th);
    std::vector<SubjectMoments> mom(n);
    std::vector<char> ok(n, 1);
    parallel_for(n, threads, [&](int i) {
      ok[i] = im.estep_subject(i, pr, im.spec.gh_nodes, true, &mom[i]) ? 1 : 0;
    });
    if (!std::all_of(ok.begin(), ok.end(), [](char c) { return c; })) {
      grad->setZero(nf);
      return kNegInf;
    }
    Eigen::VectorXd gfull = Eigen::VectorXd::Zero(lay.dim());
    std::vector<double> lls(n);
    for (int i = 0; i < n; ++i) {
      lls[i] = mom[i].loglik;
      gfull += subject_score(im.subjects[i], lay, pr, mom[i]);
    }
    grad->resize(nf);
    for (int j = 0; j < nf; ++j) (*grad)(j) = gfull(free_idx[j]);
    return neumaier_sum(lls);
  };

  OptimOptions oopts;
  oopts.max_iter = im.spec.max_direct_iter;
  oopts.rel_tol = 1e-9;
  oopts.grad_tol = 1e-5;
  OptimResult ores = bfgs_maximize(obj, x0, oopts);
  theta = to_full(ores.x);
  for (std::size_t k = 1; k < ores.trace.size(); ++k) trace.push_back(ores.trace[k]);

  // final E-step freezes the reported posterior summaries
  EstepStore fin;
  run_estep(theta, &fin);

  Params pr = im.unpack(theta);
  JointFit fit;
  fit.spec = im.spec;
  fit.beta_names = im.beta_nm;
  fit.gamma_names = im.gamma_nm;
  fit.alpha_names = im.spec.assoc.alpha_names();
  fit.beta = pr.beta;
  fit.Q = pr.Q;
  fit.sigma2 = pr.sigma2;
  fit.gamma = pr.gamma;
  fit.alpha = pr.alpha;
  fit.omega = pr.omega;
  fit.basis = im.basis;
  fit.loglik = fin.loglik;
  fit.trace = trace;
  fit.em_iterations = em_iter;
  fit.direct_iterations = ores.iterations;
  fit.converged = ores.converged || ores.grad_norm < 1e-3;
  fit.n_free_params = lay.p + lay.q + (lay.fix_alpha_zero ? 0 : lay.K) + lay.m + 1 + 3;
  fit.aic = -2.0 * fit.loglik + 2.0 * fit.n_free_params;
  for (int i = 0; i < n; ++i) {
    fit.subject_ids.push_back(im.subjects[i].id);
    LmmSubjectEstimates est;
    est.mode = fin.mom[i].mode;
    est.cov = fin.mom[i].pcov;
    fit.subjects.push_back(est);
  }

  // observed information by central differences of the analytic score,
  // step 1e-5 * (1 + |theta_j|), free parameters only
  Eigen::MatrixXd Hobs = Eigen::MatrixXd::Zero(nf, nf);
  for (int j = 0; j < nf; ++j) {
    double h = 1e-5 * (1.0 + std::abs(ores.x(j)));
    Eigen::VectorXd xp = ores.x, xm = ores.x;
    xp(j) += h;
    xm(j) -= h;
    Eigen::VectorXd gp = score(to_full(xp), threads);
    Eigen::VectorXd gm = score(to_full(xm), threads);
    for (int r = 0; r < nf; ++r)
      Hobs(r, j) = (gp(free_idx[r]) - gm(free_idx[r])) / (2.0 * h);
  }
  Hobs = 0.5 * (Hobs + Hobs.transpose());
  Eigen::MatrixXd neg = -Hobs;
  Eigen::LLT<Eigen::MatrixXd> llt(neg);
  Eigen::VectorXd se_free;
  if (llt.info() == Eigen::Success) {
    fit.se_reliable = true;
    se_free = neg.llt().solve(Eigen::MatrixXd::Identity(nf, nf)).diagonal().cwiseSqrt();
  } else {
    fit.se_reliable = false;
    // eigenvalue floor keeps the diagnostic usable while flagged
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(neg);
    Eigen::VectorXd ev = es.eigenvalues().cwiseMax(1e-10);
    Eigen::MatrixXd inv = es.eigenvectors() * ev.cwiseInverse().asDiagonal() *
                          es.eigenvectors().transpose();
    se_free = inv.diagonal().cwiseSqrt();
  }
  Eigen::VectorXd se_full =
      Eigen::VectorXd::Constant(lay.dim(), std::numeric_limits<double>::quiet_NaN());
  for (int j = 0; j < nf; ++j) se_full(free_idx[j]) = se_free(j);
  fit.se_beta = se_full.segment(lay.beta_off(), lay.p);
  fit.se_gamma = se_full.segment(lay.gamma_off(), lay.q);
  fit.se_alpha = se_full.segment(lay.alpha_off(), lay.K);
  fit.se_omega = se_full.segment(lay.omega_off(), lay.m);
  return fit;
}

JointFit fit_joint(const Dataset& ds, const JointSpec& spec, int threads) {
  JointModel model(ds, spec);
  return model.fit(threads);
}

}  // namespace jointhaz

#include "jointhaz/predict.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "jointhaz/csv.hpp"
#include "jointhaz/errors.hpp"
#include "jointhaz/quad.hpp"
#include "jointhaz/rng.hpp"
#include "jointhaz/threading.hpp"

namespace jointhaz {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;
constexpr double kExpCap = 500.0;
}  // namespace

Decomposition decompose(const JointFit& fit, const std::string& covariate) {
  if (fit.spec.assoc.kind != AssociationSpec::Value)
    throw UsageError(
        "decompose: the effect decomposition applies to the current-value "
        "association only (association is " +
        fit.spec.assoc.to_string() + ")");
  auto find = [](const std::vector<std::string>& names, const std::string& nm) {
    for (std::size_t j = 0; j < names.size(); ++j)
      if (names[j] == nm) return static_cast<int>(j);
    return -1;
  };
  int jb = find(fit.beta_names, covariate);
  int jg = find(fit.gamma_names, covariate);
  if (jb < 0 || jg < 0)
    throw UsageError("decompose: covariate '" + covariate +
                     "' must appear in both submodels");
  Decomposition d;
  d.covariate = covariate;
  d.direct = fit.gamma(jg);
  d.indirect = fit.alpha(0) * fit.beta(jb);
  d.total = d.indirect + d.direct;
  return d;
}

// ---------------------------------------------------------------------------

namespace {

// Gauss-Legendre nodes for the fit's hazard over [a, b]; cut at covariate
// jumps, requested split points and lag kinks.
struct HazNodes {
  Eigen::VectorXd w, s;
  Eigen::VectorXd cfix;   // fixed log-hazard at nodes
  Eigen::MatrixXd aload;  // n_g x 2 random-effect loading
};

HazNodes build_nodes(const JointFit& fit, const std::vector<Term>& lterms,
                     const std::vector<Term>& sterms, const SubjectHistory& h,
                     double a, double b, const std::vector<double>& extra_cuts) {
  std::vector<double> cuts;
  cuts.push_back(a);
  for (double t : h.step_times)
    if (t > a && t < b) cuts.push_back(t);
  for (double t : extra_cuts)
    if (t > a && t < b) cuts.push_back(t);
  if (fit.spec.assoc.kind == AssociationSpec::Lagged) {
    double c = fit.spec.assoc.lag;
    if (c > a && c < b) cuts.push_back(c);
    for (double t : h.step_times) {
      double ts = t + c;
      if (ts > a && ts < b) cuts.push_back(ts);
    }
  }
  cuts.push_back(b);
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  const QuadRule& gl = gauss_legendre(fit.spec.gl_nodes);
  int n_seg = static_cast<int>(cuts.size()) - 1;
  int n_g = n_seg * fit.spec.gl_nodes;
  HazNodes out;
  out.w.resize(n_g);
  out.s.resize(n_g);
  out.cfix.resize(n_g);
  out.aload.resize(n_g, 2);

  int K = fit.spec.assoc.n_alpha();
  int at = 0;
  for (int seg = 0; seg < n_seg; ++seg) {
    QuadRule r = map_to_interval(gl, cuts[seg], cuts[seg + 1]);
    for (int g = 0; g < fit.spec.gl_nodes; ++g, ++at) {
      double t = r.nodes(g);
      out.w(at) = r.weights(g);
      out.s(at) = t;
      double c = fit.basis.eval(t).dot(fit.omega);
      if (!sterms.empty()) c += design_value(sterms, h, t).dot(fit.gamma);
      Eigen::RowVector2d load = Eigen::RowVector2d::Zero();
      for (int k = 0; k < K; ++k) {
        double ak = fit.alpha(k);
        switch (fit.spec.assoc.kind) {
          case AssociationSpec::Value:
            c += ak * design_value(lterms, h, t).dot(fit.beta);
            load += ak * Eigen::RowVector2d(1.0, t);
            break;
          case AssociationSpec::Slope:
            c += ak * design_slope(lterms, h, t).dot(fit.beta);
            load += ak * Eigen::RowVector2d(0.0, 1.0);
            break;
          case AssociationSpec::ValueAndSlope:
            if (k == 0) {
              c += ak * design_value(lterms, h, t).dot(fit.beta);
              load += ak * Eigen::RowVector2d(1.0, t);
            } else {
              c += ak * design_slope(lterms, h, t).dot(fit.beta);
              load += ak * Eigen::RowVector2d(0.0, 1.0);
            }
            break;
          case AssociationSpec::Cumulative:
            c += ak * design_integral(lterms, h, t).dot(fit.beta);
            load += ak * Eigen::RowVector2d(t, 0.5 * t * t);
            break;
          case AssociationSpec::Lagged: {
            double tl = std::max(t - fit.spec.assoc.lag, 0.0);
            c += ak * design_value(lterms, h, tl).dot(fit.beta);
            load += ak * Eigen::RowVector2d(1.0, tl);
            break;
          }
        }
      }
      out.cfix(at) = c;
      out.aload.row(at) = load;
    }
  }
  return out;
}

// Laplace approximation of p(b | measurements up to s, T > s)
struct CondPosterior {
  Eigen::Vector2d mode;
  Eigen::Matrix2d cov;
  Eigen::Matrix2d lcov;  // lower Cholesky of cov
  // pieces for weight evaluation
  Eigen::MatrixXd Z;
  Eigen::VectorXd r0;  // y - X beta
  Eigen::Matrix2d ZtZ, Qinv;
  double sigma2 = 1.0;
  HazNodes nodes;  // over [t0, s]

  double logdens(const Eigen::Vector2d& b) const {
    Eigen::ArrayXd e = (nodes.cfix + nodes.aload * b).array();
    double integral = (nodes.w.array() * e.min(kExpCap).exp()).sum();
    double rss = (r0 - Z * b).squaredNorm();
    return -0.5 * rss / sigma2 - integral - 0.5 * b.dot(Qinv * b);
  }
};

CondPosterior condition_on_history(const JointFit& fit, const SubjectHistory& h,
                                   double s) {
  std::vector<Term> lterms = terms_from_coef_names(fit.beta_names);
  std::vector<Term> sterms = terms_from_coef_names(fit.gamma_names);

  CondPosterior post;
  post.sigma2 = fit.sigma2;
  post.Qinv = fit.Q.inverse();
  post.nodes = build_nodes(fit, lterms, sterms, h, h.entry_time, s, {});

  int ni = 0;
  for (double t : h.meas_times)
    if (t <= s) ++ni;
  if (ni == 0) throw UsageError("predict: history has no measurements");
  Eigen::MatrixXd X(ni, fit.beta.size());
  post.Z.resize(ni, 2);
  Eigen::VectorXd y(ni);
  for (int k = 0; k < ni; ++k) {
    double t = h.meas_times[k];
    X.row(k) = design_value(lterms, h, t);
    post.Z(k, 0) = 1.0;
    post.Z(k, 1) = t;
    y(k) = h.meas_values[k];
  }
  post.r0 = y - X * fit.beta;
  post.ZtZ = post.Z.transpose() * post.Z;

  // Newton on the concave log density
  Eigen::Vector2d b = Eigen::Vector2d::Zero();
  double g = post.logdens(b);
  for (int it = 0; it < 100; ++it) {
    Eigen::ArrayXd hval =
        (post.nodes.cfix + post.nodes.aload * b).array().min(kExpCap).exp();
    Eigen::ArrayXd wh = post.nodes.w.array() * hval;
    Eigen::Vector2d grad = post.Z.transpose() * (post.r0 - post.Z * b) / post.sigma2 -
                           post.nodes.aload.transpose() * wh.matrix() -
                           post.Qinv * b;
    Eigen::Matrix2d hess = -post.ZtZ / post.sigma2 - post.Qinv;
    for (int g2 = 0; g2 < post.nodes.aload.rows(); ++g2)
      hess -= wh(g2) *
              (post.nodes.aload.row(g2).transpose() * post.nodes.aload.row(g2));
    Eigen::Vector2d step = (-hess).ldlt().solve(grad);
    double scale = 1.0;
    Eigen::Vector2d bn = b;
    double gn = -std::numeric_limits<double>::infinity();
    for (int hs = 0; hs < 40; ++hs) {
      bn = b + scale * step;
      gn = post.logdens(bn);
      if (std::isfinite(gn) && gn >= g - 1e-13) break;
      scale *= 0.5;
    }
    double move = (bn - b).norm();
    b = bn;
    g = gn;
    if (move < 1e-11) break;
  }
  post.mode = b;
  Eigen::ArrayXd hval =
      (post.nodes.cfix + post.nodes.aload * b).array().min(kExpCap).exp();
  Eigen::ArrayXd wh = post.nodes.w.array() * hval;
  Eigen::Matrix2d hess = -post.ZtZ / post.sigma2 - post.Qinv;
  for (int g2 = 0; g2 < post.nodes.aload.rows(); ++g2)
    hess -= wh(g2) *
            (post.nodes.aload.row(g2).transpose() * post.nodes.aload.row(g2));
  post.cov = (-hess).inverse();
  Eigen::LLT<Eigen::Matrix2d> llt(post.cov);
  if (llt.info() != Eigen::Success) {
    post.cov = Eigen::Matrix2d::Identity() * 1e-8;
    llt.compute(post.cov);
  }
  post.lcov = llt.matrixL();
  return post;
}

double weighted_quantile(std::vector<std::pair<double, double>>& vw, double q) {
  // vw: (value, weight), weights sum to 1
  std::sort(vw.begin(), vw.end());
  double acc = 0.0;
  for (const auto& [v, w] : vw) {
    acc += w;
    if (acc >= q) return v;
  }
  return vw.back().first;
}

}  // namespace

Eigen::Vector2d conditional_mode(const JointFit& fit, const SubjectHistory& h) {
  if (h.meas_times.empty()) throw UsageError("predict: history has no measurements");
  double s = *std::max_element(h.meas_times.begin(), h.meas_times.end());
  return condition_on_history(fit, h, s).mode;
}

DynamicPrediction predict_survival(const JointFit& fit, const SubjectHistory& h,
                                   const std::vector<double>& horizons,
                                   const PredictOptions& opts) {
  if (h.meas_times.empty()) throw UsageError("predict: history has no measurements");
  double s = *std::max_element(h.meas_times.begin(), h.meas_times.end());
  for (double u : horizons)
    if (u < s)
      throw UsageError("predict: horizon point " + format_double(u) +
                       " precedes the conditioning time " + format_double(s));
  std::vector<double> us = horizons;
  std::sort(us.begin(), us.end());

  CondPosterior post = condition_on_history(fit, h, s);

  // forward hazard nodes on [s, max u], cut at every horizon
  std::vector<Term> lterms = terms_from_coef_names(fit.beta_names);
  std::vector<Term> sterms = terms_from_coef_names(fit.gamma_names);
  double umax = us.empty() ? s : us.back();
  int nh = static_cast<int>(us.size());

  DynamicPrediction out;
  out.s = s;
  out.horizon = us;
  out.draws = opts.draws;
  out.mean.assign(nh, 1.0);
  out.lo.assign(nh, 1.0);
  out.hi.assign(nh, 1.0);
  out.mcse.assign(nh, 0.0);
  if (nh == 0) return out;

  HazNodes fwd;
  bool have_fwd = umax > s;
  if (have_fwd) fwd = build_nodes(fit, lterms, sterms, h, s, umax, us);

  int L = opts.draws;
  Eigen::MatrixXd bdraws(L, 2);
  Eigen::VectorXd logw(L);
  const double logdet_cov =
      2.0 * (std::log(post.lcov(0, 0)) + std::log(post.lcov(1, 1)));
  for (int l = 0; l < L; ++l) {
    Rng rng(opts.seed, static_cast<std::uint64_t>(l), 0x7072656443ULL);
    Eigen::Vector2d z(rng.normal(), rng.normal());
    Eigen::Vector2d b = post.mode + post.lcov * z;
    bdraws.row(l) = b.transpose();
    // importance weight against the Gaussian proposal
    logw(l) = post.logdens(b) -
              (-kLog2Pi - 0.5 * logdet_cov - 0.5 * z.squaredNorm());
  }
  double lmax = logw.maxCoeff();
  Eigen::VectorXd w = (logw.array() - lmax).exp();
  w /= w.sum();

  // per-draw cumulative hazard at each horizon
  Eigen::MatrixXd surv(L, nh);
  if (have_fwd) {
    Eigen::MatrixXd expo =
        fwd.cfix.replicate(1, L) + fwd.aload * bdraws.transpose();
    Eigen::MatrixXd hw =
        (expo.array().min(kExpCap).exp().colwise() * fwd.w.array()).matrix();
    // nodes are ordered in time and never straddle a horizon
    for (int l = 0; l < L; ++l) {
      int j = 0;
      double cum = 0.0;
      for (int g = 0; g < fwd.s.size(); ++g) {
        while (j < nh && fwd.s(g) > us[j]) {
          surv(l, j) = std::exp(-cum);
          ++j;
        }
        cum += hw(g, l);
      }
      while (j < nh) {
        surv(l, j) = std::exp(-cum);
        ++j;
      }
    }
  } else {
    surv.setOnes();
  }

  for (int j = 0; j < nh; ++j) {
    if (us[j] <= s) {
      out.mean[j] = 1.0;
      out.lo[j] = out.hi[j] = 1.0;
      out.mcse[j] = 0.0;
      continue;
    }
    double mean = 0.0;
    for (int l = 0; l < L; ++l) mean += w(l) * surv(l, j);
    double var = 0.0;
    for (int l = 0; l < L; ++l) {
      double d = surv(l, j) - mean;
      var += w(l) * w(l) * d * d;
    }
    std::vector<std::pair<double, double>> vw(L);
    for (int l = 0; l < L; ++l) vw[l] = {surv(l, j), w(l)};
    out.mean[j] = mean;
    out.mcse[j] = std::sqrt(var);
    out.lo[j] = std::min(weighted_quantile(vw, 0.025), mean);
    out.hi[j] = std::max(weighted_quantile(vw, 0.975), mean);
  }
  return out;
}

DynamicPrediction update_prediction(const JointFit& fit, const SubjectHistory& h,
                                    double t_new, double y_new,
                                    const std::vector<double>& horizons,
                                    const PredictOptions& opts) {
  SubjectHistory ext = h;
  bool duplicate = false;
  for (std::size_t k = 0; k < h.meas_times.size(); ++k)
    if (h.meas_times[k] == t_new && h.meas_values[k] == y_new) duplicate = true;
  if (!duplicate) {
    if (!h.meas_times.empty() && t_new < h.meas_times.back())
      throw UsageError("update: new measurement precedes the last one");
    ext.meas_times.push_back(t_new);
    ext.meas_values.push_back(y_new);
    if (t_new > ext.exit_time) ext.exit_time = t_new;
  }
  return predict_survival(fit, ext, horizons, opts);
}

// ---------------------------------------------------------------------------

namespace {

// conditional survival from a Cox fit: exp(-(H(u) - H(s))) with covariates
// resolved per coefficient name at each baseline event time
double cox_cond_surv(
    const CoxFit& fit, double s, double u,
    const std::function<double(const std::string&, double)>& value_at) {
  double dh = 0.0;
  for (std::size_t k = 0; k < fit.baseline_times.size(); ++k) {
    double tk = fit.baseline_times[k];
    if (tk <= s || tk > u) continue;
    double eta = 0.0;
    for (std::size_t j = 0; j < fit.coef_names.size(); ++j)
      eta += fit.gamma(j) * value_at(fit.coef_names[j], tk);
    dh += fit.baseline_jumps[k] * std::exp(eta);
  }
  return std::exp(-dh);
}

}  // namespace

std::vector<MseRow> mse_harness(const JointFit& joint, const TwoStageFit& twostage,
                                const CoxFit& tvc, const Dataset& holdout,
                                const std::vector<double>& horizons,
                                const PredictOptions& opts) {
  const std::string& outcome = joint.spec.lmm.outcome;
  std::vector<SubjectHistory> histories = extract_histories(holdout, outcome);
  int n = holdout.n_subjects();

  std::vector<Term> static_terms = terms_from_coef_names(tvc.coef_names);

  struct Acc {
    double se_joint = 0, se_two = 0, se_tvc = 0;
    int n = 0;
  };
  std::vector<Acc> acc(horizons.size());

  std::vector<std::vector<double>> joint_event_prob(
      n, std::vector<double>(horizons.size(), -1.0));
  parallel_for(n, opts.threads, [&](int i) {
    const SubjectHistory& h = histories[i];
    double s = h.meas_times.back();
    std::vector<double> us;
    for (double d : horizons) us.push_back(s + d);
    PredictOptions po = opts;
    po.seed = splitmix64(opts.seed ^ (0x6d7365ULL + static_cast<std::uint64_t>(i)));
    po.threads = 1;
    DynamicPrediction pred = predict_survival(joint, h, us, po);
    for (std::size_t j = 0; j < horizons.size(); ++j)
      joint_event_prob[i][j] = 1.0 - pred.mean[j];
  });

  for (int i = 0; i < n; ++i) {
    const SubjectHistory& h = histories[i];
    double s = h.meas_times.back();
    LmmSubjectEstimates eb = eb_posterior(twostage.stage1, h);
    std::vector<Term> stage1_terms = terms_from_coef_names(twostage.stage1.coef_names);
    std::vector<Term> s2_terms = terms_from_coef_names(twostage.stage2.coef_names);

    auto value_tvc = [&](const std::string& name, double t) -> double {
      if (name == tvc.spec.outcome_as_tvc) {
        double v = h.meas_values.front();
        for (std::size_t k = 0; k < h.meas_times.size(); ++k)
          if (h.meas_times[k] <= t) v = h.meas_values[k];
        return v;
      }
      for (std::size_t j = 0; j < static_terms.size(); ++j)
        if (tvc.coef_names[j] == name)
          return term_value_at_time(h, static_terms[j], t);
      throw DataError("mse: cannot resolve covariate '" + name + "'");
    };
    auto value_two = [&](const std::string& name, double t) -> double {
      if (name == twostage.trajectory_name)
        return trajectory_value_at(stage1_terms, twostage.stage1.beta, eb.mode, h, t);
      for (std::size_t j = 0; j < twostage.stage2.coef_names.size(); ++j)
        if (twostage.stage2.coef_names[j] == name)
          return term_value_at_time(h, s2_terms[j], t);
      throw DataError("mse: cannot resolve covariate '" + name + "'");
    };

    for (std::size_t j = 0; j < horizons.size(); ++j) {
      double u = s + horizons[j];
      int realized;
      if (h.event == 1 && h.exit_time <= u) realized = 1;
      else if (h.exit_time >= u) realized = 0;
      else continue;  // censored before the horizon

      double p_joint = joint_event_prob[i][j];
      double p_tvc = 1.0 - cox_cond_surv(tvc, s, u, value_tvc);
      double p_two = 1.0 - cox_cond_surv(twostage.stage2, s, u, value_two);
      acc[j].se_joint += (p_joint - realized) * (p_joint - realized);
      acc[j].se_tvc += (p_tvc - realized) * (p_tvc - realized);
      acc[j].se_two += (p_two - realized) * (p_two - realized);
      acc[j].n += 1;
    }
  }

  std::vector<MseRow> rows;
  for (std::size_t j = 0; j < horizons.size(); ++j) {
    if (acc[j].n == 0) continue;
    rows.push_back({"joint", horizons[j], acc[j].se_joint / acc[j].n, acc[j].n});
    rows.push_back({"twostage", horizons[j], acc[j].se_two / acc[j].n, acc[j].n});
    rows.push_back({"tvc", horizons[j], acc[j].se_tvc / acc[j].n, acc[j].n});
  }
  return rows;
}

}  // namespace jointhaz

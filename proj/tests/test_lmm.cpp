#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "jointhaz/dataset.hpp"
#include "jointhaz/errors.hpp"
#include "jointhaz/lmm.hpp"
#include "jointhaz/rng.hpp"
#include "jointhaz/sim.hpp"

using namespace jointhaz;
using namespace testutil;

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// brute-force marginal density: dense 2-d trapezoid over the random effects
double dense_marginal_loglik(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Z,
                             const Eigen::VectorXd& y, const Eigen::VectorXd& beta,
                             const Eigen::Matrix2d& Q, double sigma2, int n_grid) {
  double s0 = std::sqrt(Q(0, 0)), s1 = std::sqrt(Q(1, 1));
  double lo0 = -6.0 * s0, hi0 = 6.0 * s0, lo1 = -6.0 * s1, hi1 = 6.0 * s1;
  double h0 = (hi0 - lo0) / (n_grid - 1), h1 = (hi1 - lo1) / (n_grid - 1);
  Eigen::Matrix2d Qinv = Q.inverse();
  double logdetQ = std::log(Q.determinant());
  int ni = static_cast<int>(y.size());
  Eigen::VectorXd r0 = y - X * beta;

  double gmax = -1e300;
  Eigen::MatrixXd gvals(n_grid, n_grid);
  for (int i = 0; i < n_grid; ++i) {
    for (int j = 0; j < n_grid; ++j) {
      Eigen::Vector2d b(lo0 + i * h0, lo1 + j * h1);
      double rss = (r0 - Z * b).squaredNorm();
      double g = -0.5 * ni * (kLog2Pi + std::log(sigma2)) - 0.5 * rss / sigma2 -
                 kLog2Pi - 0.5 * logdetQ - 0.5 * b.dot(Qinv * b);
      gvals(i, j) = g;
      gmax = std::max(gmax, g);
    }
  }
  double acc = 0.0;
  for (int i = 0; i < n_grid; ++i) {
    double wi = (i == 0 || i == n_grid - 1) ? 0.5 : 1.0;
    for (int j = 0; j < n_grid; ++j) {
      double wj = (j == 0 || j == n_grid - 1) ? 0.5 : 1.0;
      acc += wi * wj * std::exp(gvals(i, j) - gmax);
    }
  }
  return gmax + std::log(acc * h0 * h1);
}

Dataset fixture_ds() {
  return load_csv(fixture_path("panel6.csv"),
                  Schema::from_json_file(fixture_path("panel6.schema.json")));
}

}  // namespace

TEST_CASE("exact line with random effects off: beta exact, sigma2 zero") {
  Dataset ds = make_dataset(
      {{"s1", 0.0, 0.5, 0, {{"y", 1.0}, {"x", 0.0}}},
       {"s1", 0.5, 1.0, 0, {{"y", 2.0}, {"x", 0.0}}},
       {"s1", 1.0, 1.5, 0, {{"y", 3.0}, {"x", 0.0}}}},
      simple_schema);
  // measurements at t = 0, 0.5, 1 lie on y = 1 + 2t
  LmmSpec spec;
  spec.outcome = "y";
  spec.time_degree = 1;
  spec.random_effects = false;
  LmmFit fit = fit_lmm(ds, spec);
  CHECK(fit.beta(0) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(fit.beta(1) == doctest::Approx(2.0).epsilon(1e-10));
  CHECK(fit.sigma2 == doctest::Approx(0.0));
}

TEST_CASE("Q->0 constraint reproduces ordinary least squares") {
  Dataset ds = fixture_ds();
  LmmSpec spec;
  spec.outcome = "y";
  spec.covariates = {"age"};
  spec.time_degree = 1;
  spec.random_effects = false;
  LmmFit fit = fit_lmm(ds, spec);

  LmmData data = build_lmm_data(ds, spec);
  Eigen::MatrixXd X(data.n_total, data.p());
  Eigen::VectorXd y(data.n_total);
  int at = 0;
  for (std::size_t i = 0; i < data.X.size(); ++i) {
    X.middleRows(at, data.X[i].rows()) = data.X[i];
    y.segment(at, data.y[i].size()) = data.y[i];
    at += static_cast<int>(data.X[i].rows());
  }
  Eigen::VectorXd ols = (X.transpose() * X).ldlt().solve(X.transpose() * y);
  CHECK((fit.beta - ols).lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("simulated recovery with a frozen seed") {
  SimTruth truth;
  truth.n_subjects = 2;
  truth.seed = 314;
  truth.beta0 = 1.0;
  truth.beta_t = -2.0;
  truth.Q << 0.25, 0.0, 0.0, 0.25;
  truth.sigma2 = 0.04;
  truth.log_level = -30.0;  // effectively no events: balanced panels
  truth.schedule = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  Dataset ds = simulate(truth);
  REQUIRE(ds.n_subjects() == 2);
  REQUIRE(ds.n_events() == 0);

  LmmSpec spec;
  spec.outcome = "y";
  spec.time_degree = 1;
  LmmFit fit = fit_lmm(ds, spec);
  // two subjects: estimates carry the random-effect spread (sd ~ 0.35)
  CHECK(std::abs(fit.beta(0) - truth.beta0) < 1.2);
  CHECK(std::abs(fit.beta(1) - truth.beta_t) < 1.2);

  // larger sample pins them down
  truth.n_subjects = 60;
  Dataset big = simulate(truth);
  LmmFit bigfit = fit_lmm(big, spec);
  CHECK(std::abs(bigfit.beta(0) - truth.beta0) < 0.2);
  CHECK(std::abs(bigfit.beta(1) - truth.beta_t) < 0.3);
  CHECK(std::abs(bigfit.sigma2 - truth.sigma2) < 0.02);
}

TEST_CASE("fixture loglik matches the dense-grid marginal density") {
  Dataset ds = fixture_ds();
  LmmSpec spec;
  spec.outcome = "y";
  spec.covariates = {"age"};
  spec.time_degree = 1;
  LmmFit fit = fit_lmm(ds, spec);
  LmmData data = build_lmm_data(ds, spec);

  double oracle = 0.0;
  for (std::size_t i = 0; i < data.X.size(); ++i)
    oracle += dense_marginal_loglik(data.X[i], data.Z[i], data.y[i], fit.beta,
                                    fit.Q, fit.sigma2, 400);
  CHECK(fit.loglik == doctest::Approx(oracle).epsilon(1e-6));
}

TEST_CASE("local maximum: 20 random perturbations do not improve the fit") {
  Dataset ds = fixture_ds();
  LmmSpec spec;
  spec.outcome = "y";
  spec.covariates = {"age"};
  spec.time_degree = 1;
  LmmFit fit = fit_lmm(ds, spec);
  LmmData data = build_lmm_data(ds, spec);

  Eigen::VectorXd theta(data.p() + 4);
  theta << fit.beta, q_to_chol(fit.Q), std::log(fit.sigma2);
  double best = lmm_loglik(data, theta);
  CHECK(best == doctest::Approx(fit.loglik).epsilon(1e-9));

  Rng rng(55, 0);
  for (int k = 0; k < 20; ++k) {
    Eigen::VectorXd pert = theta;
    for (int j = 0; j < pert.size(); ++j)
      pert(j) += 1e-3 * (1.0 + std::abs(pert(j))) * (2.0 * rng.uniform() - 1.0);
    CHECK(lmm_loglik(data, pert) <= best + 1e-10);
  }
}

TEST_CASE("analytic score matches central differences at random points") {
  Dataset ds = fixture_ds();
  LmmSpec spec;
  spec.outcome = "y";
  spec.covariates = {"age"};
  spec.time_degree = 1;
  LmmData data = build_lmm_data(ds, spec);
  int p = data.p();

  Rng rng(99, 0);
  for (int rep = 0; rep < 5; ++rep) {
    Eigen::VectorXd theta(p + 4);
    for (int j = 0; j < p; ++j) theta(j) = rng.normal(0.0, 1.0);
    theta(p) = rng.uniform(-1.2, -0.2);      // log chol diag
    theta(p + 1) = rng.uniform(-0.3, 0.3);   // off-diagonal
    theta(p + 2) = rng.uniform(-1.2, -0.2);
    theta(p + 3) = rng.uniform(-1.5, 0.0);   // log sigma2

    Eigen::VectorXd analytic = lmm_score(data, theta);
    Eigen::VectorXd numeric = fd_gradient(
        [&](const Eigen::VectorXd& th) { return lmm_loglik(data, th); }, theta);
    double rel = (analytic - numeric).norm() / std::max(1.0, numeric.norm());
    CHECK(rel < 1e-5);
  }
}

TEST_CASE("empirical Bayes mode shrinks a single-observation subject") {
  SimTruth truth;
  truth.n_subjects = 12;
  truth.seed = 808;
  truth.beta0 = 0.5;
  truth.beta_t = -0.4;
  truth.Q << 0.36, 0.05, 0.05, 0.25;
  truth.sigma2 = 0.25;
  truth.log_level = -30.0;
  truth.schedule = {0.0, 0.2, 0.4, 0.6, 0.8};
  Dataset ds = simulate(truth);
  // append a subject with a single far-off measurement at t = 0
  ds.id.push_back("extra");
  ds.tstart.push_back(0.0);
  ds.tstop.push_back(0.5);
  ds.event.push_back(0);
  ds.values["y"].push_back(4.0);
  ds.subject_ids.push_back("extra");
  ds.groups.emplace_back(ds.n_rows() - 1, ds.n_rows());
  ds.validate();

  LmmSpec spec;
  spec.outcome = "y";
  spec.time_degree = 1;
  LmmFit fit = fit_lmm(ds, spec);
  int last = fit.subject_ids.size() - 1;
  REQUIRE(fit.subject_ids[last] == "extra");
  // unpenalized minimum-norm fit of the single residual (z = (1, 0) at t = 0)
  double resid = 4.0 - fit.beta(0);
  Eigen::Vector2d unpen(resid, 0.0);
  CHECK(fit.subjects[last].mode.norm() < unpen.norm());
  CHECK(fit.subjects[last].mode.norm() > 0.0);
}

TEST_CASE("trajectory value and slope") {
  SimTruth truth;
  truth.n_subjects = 20;
  truth.seed = 424;
  truth.beta0 = 1.0;
  truth.beta_t = -0.6;
  truth.beta_t2 = 0.3;
  truth.Q << 0.36, 0.0, 0.0, 0.25;
  truth.sigma2 = 0.25;
  truth.log_level = -30.0;
  truth.schedule = {0.0, 0.2, 0.4, 0.6, 0.8};
  Dataset ds = simulate(truth);
  LmmSpec spec;
  spec.outcome = "y";
  spec.time_degree = 2;
  LmmFit fit = fit_lmm(ds, spec);
  SubjectHistory h = extract_history(ds, 0, "y");

  // fixed part only: force b = 0 through the _at variant
  std::vector<Term> terms = terms_from_coef_names(fit.coef_names);
  Eigen::Vector2d zero = Eigen::Vector2d::Zero();
  double b0 = fit.beta(0), b1 = fit.beta(1), b2 = fit.beta(2);
  for (double t : {0.0, 0.3, 0.7})
    CHECK(trajectory_value_at(terms, fit.beta, zero, h, t) ==
          doctest::Approx(b0 + b1 * t + b2 * t * t).epsilon(1e-12));
  CHECK(trajectory_slope_at(terms, fit.beta, zero, h, 0.0) ==
        doctest::Approx(b1).epsilon(1e-12));

  // constant slope when the quadratic term is absent and the random slope set
  Eigen::VectorXd beta_lin(3);
  beta_lin << b0, b1, 0.0;
  Eigen::Vector2d b(0.0, 0.3);
  for (double t : {0.1, 0.5, 0.9})
    CHECK(trajectory_slope_at(terms, beta_lin, b, h, t) ==
          doctest::Approx(b1 + 0.3).epsilon(1e-12));

  // finite-difference check of the full fitted trajectory at t = 0.4
  double hstep = 1e-6;
  double fd = (trajectory_value(fit, h, 0.4 + hstep) -
               trajectory_value(fit, h, 0.4 - hstep)) /
              (2.0 * hstep);
  CHECK(trajectory_slope(fit, h, 0.4) == doctest::Approx(fd).epsilon(1e-6));

  // hand-computed dot product for the fitted subject
  int idx = 0;
  double expected = fit.beta(0) + fit.beta(1) * 0.4 + fit.beta(2) * 0.16 +
                    fit.subjects[idx].mode(0) + fit.subjects[idx].mode(1) * 0.4;
  CHECK(trajectory_value(fit, h, 0.4) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("rank-deficient design names the collinear column") {
  Dataset ds = fixture_ds();
  LmmSpec spec;
  spec.outcome = "y";
  spec.covariates = {"age", "age"};
  spec.time_degree = 1;
  CHECK_THROWS_WITH_AS(fit_lmm(ds, spec), doctest::Contains("rank deficient"),
                       DataError);
}

TEST_CASE("random slope requires a time term") {
  Dataset ds = fixture_ds();
  LmmSpec spec;
  spec.outcome = "y";
  spec.time_degree = 0;
  CHECK_THROWS_AS(fit_lmm(ds, spec), DataError);
}

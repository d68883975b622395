#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "jointhaz/cox.hpp"
#include "jointhaz/errors.hpp"
#include "jointhaz/rng.hpp"
#include "jointhaz/sim.hpp"

using namespace jointhaz;
using namespace testutil;

namespace {

// four subjects, alternating event order between the x groups so the
// partial likelihood has an interior maximum:
//   l(g) = g - log(2 + 2 e^g) - log(2 + e^g)
Dataset four_subjects() {
  return make_dataset(
      {{"s1", 0.0, 1.0, 1, {{"y", 0.0}, {"x", 1.0}}},
       {"s2", 0.0, 2.0, 1, {{"y", 0.0}, {"x", 0.0}}},
       {"s3", 0.0, 3.0, 0, {{"y", 0.0}, {"x", 1.0}}},
       {"s4", 0.0, 4.0, 1, {{"y", 0.0}, {"x", 0.0}}}},
      simple_schema);
}

double enumerated_loglik(double g) {
  return g - std::log(2.0 + 2.0 * std::exp(g)) - std::log(2.0 + std::exp(g));
}

}  // namespace

TEST_CASE("hand-enumerated partial likelihood and brute-force root") {
  Dataset ds = four_subjects();
  CoxSpec spec;
  spec.covariates = {"x"};
  CoxFit fit = fit_cox(ds, spec);
  REQUIRE(fit.converged);

  // the fitted value maximizes the enumerated likelihood
  CHECK(fit.loglik == doctest::Approx(enumerated_loglik(fit.gamma(0))).epsilon(1e-12));

  // bisection on the hand-derived score 1 - p1(g) - p2(g)
  auto score = [](double g) {
    double e = std::exp(g);
    return 1.0 - 2.0 * e / (2.0 + 2.0 * e) - e / (2.0 + e);
  };
  double lo = -10.0, hi = 10.0;
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    if (score(mid) > 0.0) lo = mid;
    else hi = mid;
  }
  CHECK(std::abs(fit.gamma(0) - 0.5 * (lo + hi)) < 1e-8);
}

TEST_CASE("null model: partial loglik is minus the log risk-set sizes") {
  Dataset ds = four_subjects();
  CoxSpec spec;  // no covariates
  CoxFit fit = fit_cox(ds, spec);
  CHECK(fit.loglik ==
        doctest::Approx(-std::log(4.0) - std::log(3.0) - std::log(1.0)));
  // Nelson-Aalen jumps
  REQUIRE(fit.baseline_jumps.size() == 3);
  CHECK(fit.baseline_jumps[0] == doctest::Approx(1.0 / 4.0));
  CHECK(fit.baseline_jumps[1] == doctest::Approx(1.0 / 3.0));
  CHECK(fit.baseline_jumps[2] == doctest::Approx(1.0));
}

TEST_CASE("delayed entry: late entrants are excluded from earlier risk sets") {
  Dataset ds = make_dataset(
      {{"s1", 0.0, 1.0, 1, {{"y", 0.0}, {"x", 0.0}}},
       {"s2", 2.0, 3.0, 1, {{"y", 0.0}, {"x", 0.0}}},
       {"s3", 0.0, 4.0, 0, {{"y", 0.0}, {"x", 0.0}}}},
      simple_schema);
  CoxSpec spec;
  CoxFit fit = fit_cox(ds, spec);
  // risk sets {s1, s3} and {s2, s3}, recomputed by hand
  CHECK(fit.loglik == doctest::Approx(-2.0 * std::log(2.0)));
  REQUIRE(fit.baseline_jumps.size() == 2);
  CHECK(fit.baseline_jumps[0] == doctest::Approx(0.5));
  CHECK(fit.baseline_jumps[1] == doctest::Approx(0.5));
}

TEST_CASE("single subject, single event: baseline jump one") {
  Dataset ds = make_dataset({{"s1", 0.0, 1.0, 1, {{"y", 0.0}, {"x", 0.0}}}},
                            simple_schema);
  CoxFit fit = fit_cox(ds, CoxSpec{});
  REQUIRE(fit.baseline_jumps.size() == 1);
  CHECK(fit.baseline_jumps[0] == doctest::Approx(1.0));
}

TEST_CASE("baseline is non-decreasing on the fixture") {
  Dataset ds = load_csv(fixture_path("panel6.csv"),
                        Schema::from_json_file(fixture_path("panel6.schema.json")));
  CoxSpec spec;
  spec.covariates = {"age"};
  CoxFit fit = fit_cox(ds, spec);
  auto [times, jumps] = breslow_baseline(fit, ds);
  double prev = 0.0, acc = 0.0;
  for (std::size_t k = 0; k < times.size(); ++k) {
    CHECK(jumps[k] > 0.0);
    acc += jumps[k];
    CHECK(acc >= prev);
    prev = acc;
  }
  CHECK(fit.cumulative_baseline(0.0) == doctest::Approx(0.0));
}

TEST_CASE("score and information match finite differences") {
  SimTruth truth;
  truth.n_subjects = 40;
  truth.seed = 2024;
  truth.beta0 = 0.5;
  truth.beta_t = -0.5;
  truth.Q << 0.25, 0.0, 0.0, 0.25;
  truth.sigma2 = 0.25;
  truth.covariates.push_back({"x", false, 0.0, 1.0, 0.5, 0.4, 0.5});
  truth.log_level = -0.5;
  truth.schedule = {0.0, 0.2, 0.4, 0.6, 0.8};
  Dataset ds = simulate(truth);
  REQUIRE(ds.n_events() > 3);

  CoxSpec spec;
  spec.covariates = {"x"};
  spec.outcome_as_tvc = "y";
  CoxData data = build_cox_data(ds, spec);

  Rng rng(77, 0);
  for (int rep = 0; rep < 5; ++rep) {
    Eigen::VectorXd g(2);
    g << rng.normal(0.0, 0.5), rng.normal(0.0, 0.5);
    Eigen::VectorXd analytic = cox_score(data, g);
    Eigen::VectorXd numeric = fd_gradient(
        [&](const Eigen::VectorXd& v) { return cox_partial_loglik(data, v); }, g);
    CHECK((analytic - numeric).norm() / std::max(1.0, numeric.norm()) < 1e-5);

    // information = minus Hessian, column by column via FD of the score
    Eigen::MatrixXd info = cox_information(data, g);
    for (int j = 0; j < 2; ++j) {
      double h = 1e-6 * (1.0 + std::abs(g(j)));
      Eigen::VectorXd gp = g, gm = g;
      gp(j) += h;
      gm(j) -= h;
      Eigen::VectorXd col = (cox_score(data, gp) - cox_score(data, gm)) / (2.0 * h);
      for (int r = 0; r < 2; ++r)
        CHECK(info(r, j) == doctest::Approx(-col(r)).epsilon(1e-5));
    }
  }
}

TEST_CASE("score vanishes at the optimum") {
  Dataset ds = load_csv(fixture_path("panel6.csv"),
                        Schema::from_json_file(fixture_path("panel6.schema.json")));
  CoxSpec spec;
  spec.covariates = {"age", "load"};
  CoxFit fit = fit_cox(ds, spec);
  CoxData data = build_cox_data(ds, spec);
  CHECK(cox_score(data, fit.gamma).lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("invariance: shifting a covariate leaves gamma unchanged") {
  Dataset ds = four_subjects();
  CoxSpec spec;
  spec.covariates = {"x"};
  CoxFit base = fit_cox(ds, spec);

  Dataset shifted = ds;
  for (auto& v : shifted.values["x"]) v += 5.0;
  CoxFit shift_fit = fit_cox(shifted, spec);
  CHECK(std::abs(base.gamma(0) - shift_fit.gamma(0)) < 1e-8);
}

TEST_CASE("invariance: doubling all times leaves gamma unchanged") {
  Dataset ds = four_subjects();
  CoxSpec spec;
  spec.covariates = {"x"};
  CoxFit base = fit_cox(ds, spec);

  Dataset doubled = ds;
  for (auto& t : doubled.tstart) t *= 2.0;
  for (auto& t : doubled.tstop) t *= 2.0;
  CoxFit dfit = fit_cox(doubled, spec);
  CHECK(std::abs(base.gamma(0) - dfit.gamma(0)) < 1e-8);
}

TEST_CASE("monotone likelihood is flagged, not fatal") {
  // binary covariate perfectly separates the two events
  Dataset ds = make_dataset(
      {{"s1", 0.0, 1.0, 1, {{"y", 0.0}, {"x", 1.0}}},
       {"s2", 0.0, 2.0, 1, {{"y", 0.0}, {"x", 1.0}}},
       {"s3", 0.0, 3.0, 0, {{"y", 0.0}, {"x", 0.0}}}},
      simple_schema);
  CoxSpec spec;
  spec.covariates = {"x"};
  CoxFit fit = fit_cox(ds, spec);
  CHECK(fit.monotone_flag[0]);
}

TEST_CASE("no events is a data error") {
  Dataset ds = make_dataset({{"s1", 0.0, 1.0, 0, {{"y", 0.0}, {"x", 0.0}}}},
                            simple_schema);
  CHECK_THROWS_AS(fit_cox(ds, CoxSpec{}), DataError);
}

TEST_CASE("tvc model: constant outcome equals a time-constant covariate fit") {
  const char* schema =
      R"({"columns": {"id": "id", "tstart": "time", "tstop": "time", "event": "event", "y": "numeric", "yc": "numeric", "x": "numeric"}})";
  std::vector<RowSpec> rows;
  double yvals[4] = {1.0, -0.5, 0.7, 0.1};
  for (int i = 0; i < 4; ++i) {
    std::string id = "s" + std::to_string(i + 1);
    rows.push_back({id, 0.0, 0.5, 0,
                    {{"y", yvals[i]}, {"yc", yvals[i]}, {"x", i % 2 ? 1.0 : 0.0}}});
    rows.push_back({id, 0.5, 1.0 + 0.1 * i, i != 2 ? 1 : 0,
                    {{"y", yvals[i]}, {"yc", yvals[i]}, {"x", i % 2 ? 1.0 : 0.0}}});
  }
  Dataset ds = make_dataset(rows, schema);

  CoxSpec tvc;
  tvc.covariates = {"x"};
  tvc.outcome_as_tvc = "y";
  CoxFit f1 = fit_tvc_model(ds, tvc);

  CoxSpec cc;
  cc.covariates = {"x", "yc"};
  CoxFit f2 = fit_cox(ds, cc);
  CHECK(std::abs(f1.gamma(0) - f2.gamma(0)) < 1e-9);
  CHECK(std::abs(f1.gamma(1) - f2.gamma(1)) < 1e-9);
}

TEST_CASE("tvc model attenuates the endogenous association") {
  SimTruth truth;
  truth.n_subjects = 250;
  truth.seed = 512;
  truth.beta_t = -0.8;
  truth.Q << 0.49, -0.126, -0.126, 0.81;
  truth.sigma2 = 1.0;
  truth.alpha(0) = -0.5;
  truth.log_level = -1.6;
  truth.schedule = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  Dataset ds = simulate(truth);
  REQUIRE(ds.n_events() > 20);

  CoxSpec spec;
  spec.outcome_as_tvc = "y";
  CoxFit fit = fit_tvc_model(ds, spec);
  // noisy LVCF values attenuate toward zero
  CHECK(std::abs(fit.gamma(0)) < 0.5);
  CHECK(fit.gamma(0) < 0.0);
}

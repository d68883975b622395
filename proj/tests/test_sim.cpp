#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "helpers.hpp"
#include "jointhaz/csv.hpp"
#include "jointhaz/rng.hpp"
#include "jointhaz/sim.hpp"

using namespace jointhaz;
using namespace testutil;

TEST_CASE("event times follow the truncated exponential under a null model") {
  SimTruth truth;
  truth.n_subjects = 5000;
  truth.seed = 71;
  truth.Q << 0.25, 0.0, 0.0, 0.25;
  truth.sigma2 = 0.5;
  truth.alpha(0) = 0.0;
  double lambda = 1.3;
  truth.log_level = std::log(lambda);
  truth.schedule = {0.0, 0.25, 0.5, 0.75};
  Dataset ds = simulate(truth);

  std::vector<double> events;
  for (int g = 0; g < ds.n_subjects(); ++g) {
    auto [lo, hi] = ds.groups[g];
    if (ds.event[hi - 1] == 1) events.push_back(ds.tstop[hi - 1]);
  }
  std::sort(events.begin(), events.end());
  double n = static_cast<double>(events.size());
  REQUIRE(n > 3000);

  // Kolmogorov-Smirnov against Exponential(lambda) | T <= 1
  double denom = 1.0 - std::exp(-lambda);
  double d_stat = 0.0;
  for (std::size_t i = 0; i < events.size(); ++i) {
    double f = (1.0 - std::exp(-lambda * events[i])) / denom;
    d_stat = std::max(d_stat, std::abs((i + 1) / n - f));
    d_stat = std::max(d_stat, std::abs(f - i / n));
  }
  double d_crit = 1.628 / std::sqrt(n);  // level 0.01
  CHECK(d_stat < d_crit);

  // censoring proportion against its closed form, +-3% at this scale
  double censored = (ds.n_subjects() - events.size()) /
                    static_cast<double>(ds.n_subjects());
  CHECK(std::abs(censored - std::exp(-lambda)) < 0.03);
}

TEST_CASE("noise-free generation lies exactly on the fixed-effect curve") {
  SimTruth truth;
  truth.n_subjects = 20;
  truth.seed = 9;
  truth.beta0 = 2.0;
  truth.beta_t = -1.0;
  truth.beta_t2 = 0.25;
  truth.Q.setZero();
  truth.sigma2 = 0.0;
  truth.log_level = -1.0;
  truth.schedule = {0.0, 0.2, 0.4, 0.6, 0.8};
  Dataset ds = simulate(truth);
  const auto& y = ds.values.at("y");
  for (int r = 0; r < ds.n_rows(); ++r) {
    double t = ds.tstart[r];
    CHECK(y[r] == doctest::Approx(2.0 - t + 0.25 * t * t).epsilon(1e-14));
  }
}

TEST_CASE("coupled seeds: a protective association delays every event") {
  SimTruth rising;
  rising.n_subjects = 400;
  rising.seed = 31337;
  rising.beta0 = 2.0;   // trajectories stay positive
  rising.beta_t = 1.0;  // and rise
  rising.Q << 0.04, 0.0, 0.0, 0.04;
  rising.sigma2 = 0.25;
  rising.log_level = 0.0;
  rising.schedule = {0.0, 0.2, 0.4, 0.6, 0.8};

  SimTruth null_truth = rising;
  null_truth.alpha(0) = 0.0;
  SimTruth prot = rising;
  prot.alpha(0) = -1.0;

  Dataset d0 = simulate(null_truth);
  Dataset d1 = simulate(prot);
  REQUIRE(d0.n_subjects() == d1.n_subjects());
  CHECK(d1.n_events() < d0.n_events());

  // per-subject exit times move one way under common random numbers
  for (int g = 0; g < d0.n_subjects(); ++g) {
    double exit0 = d0.tstop[d0.groups[g].second - 1];
    double exit1 = d1.tstop[d1.groups[g].second - 1];
    CHECK(exit1 >= exit0 - 1e-12);
  }
}

TEST_CASE("oracle_cumhaz: constant hazard") {
  SimTruth truth;
  truth.log_level = std::log(2.0);
  truth.alpha(0) = 0.0;
  SubjectDraw d;
  CHECK(oracle_cumhaz(truth, d, 0.5) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("oracle_cumhaz: linear log-hazard closed form") {
  // log h(s) = w0 + w1 s via a value association on m(s) = beta0 + beta_t s
  SimTruth truth;
  truth.log_level = -0.4;
  truth.beta0 = 0.3;
  truth.beta_t = 1.1;
  truth.alpha(0) = 1.0;
  SubjectDraw d;
  double w0 = truth.log_level + truth.beta0;
  double w1 = truth.beta_t;
  for (double t : {0.25, 0.6, 1.0}) {
    double closed = std::exp(w0) / w1 * (std::exp(w1 * t) - 1.0);
    CHECK(std::abs(oracle_cumhaz(truth, d, t) - closed) < 1e-8);
  }
}

TEST_CASE("generator and oracle cumulative hazards agree on random draws") {
  Rng seeder(404, 0);
  for (int rep = 0; rep < 100; ++rep) {
    SimTruth truth;
    truth.seed = 404;
    truth.beta0 = seeder.normal(0.0, 0.5);
    truth.beta_t = seeder.normal(0.0, 0.7);
    truth.beta_t2 = seeder.normal(0.0, 0.3);
    truth.Q << 0.49, 0.0, 0.0, 0.49;
    truth.covariates.push_back({"x", false, 0.0, 1.0, 0.5, 0.4, 0.3});
    int form = rep % 3;
    if (form == 0) {
      truth.log_level = seeder.uniform(-1.5, 0.0);
    } else if (form == 1) {
      truth.baseline_form = SimTruth::Weibull;
      truth.shape = 2.0;
      truth.scale = seeder.uniform(0.8, 1.6);
    } else {
      truth.baseline_form = SimTruth::Spline;
      truth.spline_degree = 3;
      truth.spline_interior = {0.3, 0.6};
      truth.spline_coef.resize(6);
      for (int j = 0; j < 6; ++j) truth.spline_coef(j) = seeder.uniform(-1.0, 0.5);
    }
    int kinds = rep % 5;
    truth.assoc.kind = static_cast<AssociationSpec::Kind>(kinds);
    if (truth.assoc.kind == AssociationSpec::Lagged) truth.assoc.lag = 0.1;
    truth.alpha = Eigen::VectorXd::Zero(truth.assoc.n_alpha());
    for (int k = 0; k < truth.alpha.size(); ++k)
      truth.alpha(k) = seeder.uniform(-0.6, 0.6);

    SubjectDraw d = draw_subject(truth, rep);
    double t = seeder.uniform(0.2, 1.0);
    double a = gl_cumhaz(truth, d, t);
    double b = oracle_cumhaz(truth, d, t);
    CHECK(std::abs(a - b) / std::max(1.0, std::abs(b)) < 1e-6);
  }
}

TEST_CASE("same seed gives a byte-identical dataset") {
  SimTruth truth;
  truth.n_subjects = 50;
  truth.seed = 11;
  truth.covariates.push_back({"x", true, 0.0, 1.0, 0.4, 0.3, 0.2});
  truth.log_level = -0.8;
  truth.schedule = {0.0, 0.3, 0.6};
  Dataset a = simulate(truth);
  Dataset b = simulate(truth);
  std::string dir = temp_dir("simdet");
  write_csv(dir + "/a.csv", a);
  write_csv(dir + "/b.csv", b);
  CHECK(slurp(dir + "/a.csv") == slurp(dir + "/b.csv"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("truth config round-trips through JSON") {
  SimTruth truth;
  truth.n_subjects = 77;
  truth.seed = 5;
  truth.beta0 = 1.0;
  truth.covariates.push_back({"z", true, 0.0, 1.0, 0.3, -0.2, 0.1});
  truth.assoc.kind = AssociationSpec::Lagged;
  truth.assoc.lag = 0.08;
  truth.cens_kind = SimTruth::UniformCensoring;
  truth.cens_a = 0.5;
  truth.cens_b = 0.9;
  SimTruth back = SimTruth::from_json_string(truth.to_json_string());
  CHECK(back.n_subjects == truth.n_subjects);
  CHECK(back.assoc.kind == AssociationSpec::Lagged);
  CHECK(back.assoc.lag == doctest::Approx(0.08));
  CHECK(back.cens_kind == SimTruth::UniformCensoring);
  CHECK(back.covariates.size() == 1);
  CHECK(back.covariates[0].bernoulli);

  // generated data from the round-tripped config is identical
  truth.schedule = {0.0, 0.5};
  back.schedule = {0.0, 0.5};
  Dataset a = simulate(truth);
  Dataset b = simulate(back);
  REQUIRE(a.n_rows() == b.n_rows());
  for (int r = 0; r < a.n_rows(); ++r) CHECK(a.values.at("y")[r] == b.values.at("y")[r]);
}

TEST_CASE("uniform censoring lowers the event count") {
  SimTruth truth;
  truth.n_subjects = 800;
  truth.seed = 21;
  truth.log_level = -0.3;
  truth.schedule = {0.0, 0.25, 0.5, 0.75};
  Dataset full = simulate(truth);
  truth.cens_kind = SimTruth::UniformCensoring;
  truth.cens_a = 0.2;
  truth.cens_b = 0.8;
  Dataset cens = simulate(truth);
  CHECK(cens.n_events() < full.n_events());
  CHECK(cens.max_tstop() <= 0.8 + 1e-12);
}

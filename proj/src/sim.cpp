#include "jointhaz/sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "jointhaz/csv.hpp"
#include "jointhaz/errors.hpp"
#include "jointhaz/quad.hpp"
#include "jointhaz/rng.hpp"

namespace jointhaz {

namespace {

// rng stream purposes
constexpr std::uint64_t kCov = 1, kRanef = 2, kNoise = 3, kEventU = 4, kCensor = 5;

BSplineBasis truth_basis(const SimTruth& t) {
  return BSplineBasis(t.spline_degree, t.spline_interior, 0.0, 1.0);
}

}  // namespace

SimTruth SimTruth::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open truth config: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_string(ss.str());
}

SimTruth SimTruth::from_json_string(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("truth config: invalid JSON: ") + e.what());
  }
  SimTruth t;
  t.n_subjects = j.value("n_subjects", 100);
  t.seed = j.value("seed", static_cast<std::uint64_t>(1));
  if (j.contains("longitudinal")) {
    const auto& lj = j["longitudinal"];
    t.beta0 = lj.value("intercept", 0.0);
    t.beta_t = lj.value("time", 0.0);
    t.beta_t2 = lj.value("time2", 0.0);
  }
  if (j.contains("covariates")) {
    for (const auto& cj : j["covariates"]) {
      SimTruth::Covariate c;
      c.name = cj.at("name").get<std::string>();
      std::string dist = cj.value("dist", std::string("normal"));
      if (dist == "bernoulli") {
        c.bernoulli = true;
        c.p = cj.value("p", 0.5);
      } else if (dist == "normal") {
        c.mean = cj.value("mean", 0.0);
        c.sd = cj.value("sd", 1.0);
      } else {
        throw DataError("truth config: unknown covariate dist '" + dist + "'");
      }
      c.beta = cj.value("beta", 0.0);
      c.gamma = cj.value("gamma", 0.0);
      t.covariates.push_back(c);
    }
  }
  if (j.contains("random_effects")) {
    const auto& rj = j["random_effects"];
    double s0 = rj.value("sd_intercept", 1.0);
    double s1 = rj.value("sd_slope", 1.0);
    double rho = rj.value("corr", 0.0);
    t.Q << s0 * s0, rho * s0 * s1, rho * s0 * s1, s1 * s1;
  }
  t.sigma2 = j.value("sigma2", 1.0);
  if (j.contains("association")) {
    const auto& aj = j["association"];
    std::string kind = aj.value("kind", std::string("value"));
    if (kind == "lagged") {
      t.assoc.kind = AssociationSpec::Lagged;
      t.assoc.lag = aj.value("lag", 0.0);
    } else {
      t.assoc = AssociationSpec::parse(kind);
    }
    auto av = aj.value("alpha", std::vector<double>{0.0});
    t.alpha = Eigen::Map<Eigen::VectorXd>(av.data(), av.size());
    if (t.alpha.size() != t.assoc.n_alpha())
      throw DataError("truth config: alpha length does not match association");
  }
  if (j.contains("baseline")) {
    const auto& bj = j["baseline"];
    std::string form = bj.value("form", std::string("constant"));
    if (form == "constant") {
      t.baseline_form = SimTruth::Constant;
      t.log_level = bj.value("log_level", 0.0);
    } else if (form == "weibull") {
      t.baseline_form = SimTruth::Weibull;
      t.shape = bj.value("shape", 1.0);
      t.scale = bj.value("scale", 1.0);
    } else if (form == "spline") {
      t.baseline_form = SimTruth::Spline;
      t.spline_degree = bj.value("degree", 3);
      t.spline_interior = bj.value("knots", std::vector<double>{});
      auto sc = bj.value("coefs", std::vector<double>{});
      t.spline_coef = Eigen::Map<Eigen::VectorXd>(sc.data(), sc.size());
      if (t.spline_coef.size() != truth_basis(t).dim())
        throw DataError("truth config: spline coefs do not match basis dim");
    } else {
      throw DataError("truth config: unknown baseline form '" + form + "'");
    }
  }
  if (j.contains("schedule"))
    t.schedule = j["schedule"].get<std::vector<double>>();
  if (t.schedule.empty() || t.schedule.front() != 0.0)
    throw DataError("truth config: schedule must start at 0");
  for (std::size_t k = 0; k < t.schedule.size(); ++k) {
    if (t.schedule[k] < 0.0 || t.schedule[k] >= 1.0)
      throw DataError("truth config: schedule times must lie in [0, 1)");
    if (k > 0 && t.schedule[k] <= t.schedule[k - 1])
      throw DataError("truth config: schedule must be strictly increasing");
  }
  if (j.contains("censoring")) {
    const auto& cj = j["censoring"];
    std::string kind = cj.value("kind", std::string("none"));
    if (kind == "none") {
      t.cens_kind = SimTruth::NoCensoring;
    } else if (kind == "fixed") {
      t.cens_kind = SimTruth::FixedCensoring;
      t.cens_a = cj.value("time", 1.0);
    } else if (kind == "uniform") {
      t.cens_kind = SimTruth::UniformCensoring;
      t.cens_a = cj.value("lo", 0.5);
      t.cens_b = cj.value("hi", 1.0);
    } else {
      throw DataError("truth config: unknown censoring kind '" + kind + "'");
    }
  }
  return t;
}

std::string SimTruth::to_json_string() const {
  nlohmann::json j;
  j["n_subjects"] = n_subjects;
  j["seed"] = seed;
  j["longitudinal"] = {{"intercept", beta0}, {"time", beta_t}, {"time2", beta_t2}};
  for (const auto& c : covariates) {
    nlohmann::json cj;
    cj["name"] = c.name;
    if (c.bernoulli) {
      cj["dist"] = "bernoulli";
      cj["p"] = c.p;
    } else {
      cj["dist"] = "normal";
      cj["mean"] = c.mean;
      cj["sd"] = c.sd;
    }
    cj["beta"] = c.beta;
    cj["gamma"] = c.gamma;
    j["covariates"].push_back(cj);
  }
  double s0 = std::sqrt(Q(0, 0)), s1 = std::sqrt(Q(1, 1));
  j["random_effects"] = {{"sd_intercept", s0},
                         {"sd_slope", s1},
                         {"corr", Q(0, 1) / (s0 * s1)}};
  j["sigma2"] = sigma2;
  nlohmann::json aj;
  if (assoc.kind == AssociationSpec::Lagged) {
    aj["kind"] = "lagged";
    aj["lag"] = assoc.lag;
  } else {
    aj["kind"] = assoc.to_string();
  }
  aj["alpha"] = std::vector<double>(alpha.data(), alpha.data() + alpha.size());
  j["association"] = aj;
  nlohmann::json bj;
  switch (baseline_form) {
    case Constant:
      bj["form"] = "constant";
      bj["log_level"] = log_level;
      break;
    case Weibull:
      bj["form"] = "weibull";
      bj["shape"] = shape;
      bj["scale"] = scale;
      break;
    case Spline:
      bj["form"] = "spline";
      bj["degree"] = spline_degree;
      bj["knots"] = spline_interior;
      bj["coefs"] = std::vector<double>(spline_coef.data(),
                                        spline_coef.data() + spline_coef.size());
      break;
  }
  j["baseline"] = bj;
  j["schedule"] = schedule;
  switch (cens_kind) {
    case NoCensoring: j["censoring"] = {{"kind", "none"}}; break;
    case FixedCensoring: j["censoring"] = {{"kind", "fixed"}, {"time", cens_a}}; break;
    case UniformCensoring:
      j["censoring"] = {{"kind", "uniform"}, {"lo", cens_a}, {"hi", cens_b}};
      break;
  }
  return j.dump(2);
}

Schema SimTruth::make_schema() const {
  std::string text = R"({"columns": {"id": "id", "tstart": "time", "tstop": "time", "event": "event", "y": "numeric")";
  for (const auto& c : covariates) text += ", \"" + c.name + "\": \"numeric\"";
  text += "}}";
  return Schema::from_json_string(text);
}

SubjectDraw draw_subject(const SimTruth& truth, int subject) {
  SubjectDraw d;
  Rng rc(truth.seed, static_cast<std::uint64_t>(subject), kCov);
  for (const auto& c : truth.covariates)
    d.cov.push_back(c.bernoulli ? (rc.uniform() < c.p ? 1.0 : 0.0)
                                : rc.normal(c.mean, c.sd));
  Rng rb(truth.seed, static_cast<std::uint64_t>(subject), kRanef);
  Eigen::Vector2d z(rb.normal(), rb.normal());
  Eigen::LLT<Eigen::Matrix2d> llt(truth.Q);
  if (llt.info() == Eigen::Success) {
    d.b = llt.matrixL() * z;
  } else {
    d.b.setZero();  // Q == 0 (degenerate, noise-free checks)
  }
  return d;
}

double true_trajectory(const SimTruth& truth, const SubjectDraw& d, double t) {
  double m = truth.beta0 + d.b(0) + (truth.beta_t + d.b(1)) * t +
             truth.beta_t2 * t * t;
  for (std::size_t c = 0; c < truth.covariates.size(); ++c)
    m += truth.covariates[c].beta * d.cov[c];
  return m;
}

namespace {

double true_log_baseline(const SimTruth& truth, double t) {
  switch (truth.baseline_form) {
    case SimTruth::Constant:
      return truth.log_level;
    case SimTruth::Weibull:
      // h(t) = (k / lambda) (t / lambda)^(k-1)
      if (t <= 0.0) return truth.shape > 1.0
                               ? -std::numeric_limits<double>::infinity()
                               : std::log(truth.shape / truth.scale);
      return std::log(truth.shape / truth.scale) +
             (truth.shape - 1.0) * std::log(t / truth.scale);
    case SimTruth::Spline:
      return truth_basis(truth).eval(t).dot(truth.spline_coef);
  }
  return 0.0;
}

double assoc_contrib(const SimTruth& truth, const SubjectDraw& d, double t) {
  double a0 = truth.beta0 + d.b(0);
  for (std::size_t c = 0; c < truth.covariates.size(); ++c)
    a0 += truth.covariates[c].beta * d.cov[c];
  double a1 = truth.beta_t + d.b(1);
  double a2 = truth.beta_t2;
  switch (truth.assoc.kind) {
    case AssociationSpec::Value:
      return truth.alpha(0) * (a0 + a1 * t + a2 * t * t);
    case AssociationSpec::Slope:
      return truth.alpha(0) * (a1 + 2.0 * a2 * t);
    case AssociationSpec::ValueAndSlope:
      return truth.alpha(0) * (a0 + a1 * t + a2 * t * t) +
             truth.alpha(1) * (a1 + 2.0 * a2 * t);
    case AssociationSpec::Cumulative:
      return truth.alpha(0) *
             (a0 * t + 0.5 * a1 * t * t + a2 * t * t * t / 3.0);
    case AssociationSpec::Lagged: {
      double tl = std::max(t - truth.assoc.lag, 0.0);
      return truth.alpha(0) * (a0 + a1 * tl + a2 * tl * tl);
    }
  }
  return 0.0;
}

}  // namespace

double true_log_hazard(const SimTruth& truth, const SubjectDraw& d, double t) {
  double lh = true_log_baseline(truth, t);
  for (std::size_t c = 0; c < truth.covariates.size(); ++c)
    lh += truth.covariates[c].gamma * d.cov[c];
  return lh + assoc_contrib(truth, d, t);
}

double gl_cumhaz(const SimTruth& truth, const SubjectDraw& d, double t) {
  if (t <= 0.0) return 0.0;
  // fixed segmentation: 64 even segments over [0, 1], partial last segment
  const int n_seg = 64;
  const QuadRule& gl = gauss_legendre(15);
  double acc = 0.0;
  for (int seg = 0; seg < n_seg; ++seg) {
    double a = seg / static_cast<double>(n_seg);
    double b = (seg + 1) / static_cast<double>(n_seg);
    if (a >= t) break;
    b = std::min(b, t);
    QuadRule r = map_to_interval(gl, a, b);
    for (int g = 0; g < r.nodes.size(); ++g)
      acc += r.weights(g) * std::exp(true_log_hazard(truth, d, r.nodes(g)));
  }
  return acc;
}

namespace {

double adaptive_trap(const SimTruth& truth, const SubjectDraw& d, double a,
                     double b, double fa, double fb, double whole, double tol,
                     int depth) {
  double m = 0.5 * (a + b);
  double fm = std::exp(true_log_hazard(truth, d, m));
  double left = 0.5 * (m - a) * (fa + fm);
  double right = 0.5 * (b - m) * (fm + fb);
  if (depth > 48 || std::abs(left + right - whole) <= 3.0 * tol)
    return left + right;
  return adaptive_trap(truth, d, a, m, fa, fm, left, 0.5 * tol, depth + 1) +
         adaptive_trap(truth, d, m, b, fm, fb, right, 0.5 * tol, depth + 1);
}

}  // namespace

double oracle_cumhaz(const SimTruth& truth, const SubjectDraw& d, double t) {
  if (t <= 0.0) return 0.0;
  double fa = std::exp(true_log_hazard(truth, d, 1e-300));
  if (!std::isfinite(fa)) fa = 0.0;  // weibull shape>1 at t=0
  double fb = std::exp(true_log_hazard(truth, d, t));
  double whole = 0.5 * t * (fa + fb);
  return adaptive_trap(truth, d, 0.0, t, fa, fb, whole, 1e-9, 0);
}

Dataset simulate(const SimTruth& truth) {
  Schema schema = truth.make_schema();
  Dataset ds;
  ds.schema = schema;
  ds.values["y"] = {};
  for (const auto& c : truth.covariates) ds.values[c.name] = {};

  for (int i = 0; i < truth.n_subjects; ++i) {
    SubjectDraw d = draw_subject(truth, i);

    Rng ru(truth.seed, static_cast<std::uint64_t>(i), kEventU);
    double target = -std::log(ru.uniform());

    // find T with cumulative hazard == target; administrative censor at 1
    double event_time = std::numeric_limits<double>::infinity();
    double h_full = gl_cumhaz(truth, d, 1.0);
    if (h_full >= target) {
      double lo = 0.0, hi = 1.0;
      for (int it = 0; it < 200; ++it) {
        double mid = 0.5 * (lo + hi);
        if (gl_cumhaz(truth, d, mid) >= target)
          hi = mid;
        else
          lo = mid;
        if (hi - lo < 1e-10) break;
      }
      event_time = 0.5 * (lo + hi);
    }

    double censor_time = 1.0;
    Rng rc(truth.seed, static_cast<std::uint64_t>(i), kCensor);
    if (truth.cens_kind == SimTruth::FixedCensoring) {
      censor_time = std::min(truth.cens_a, 1.0);
    } else if (truth.cens_kind == SimTruth::UniformCensoring) {
      censor_time = std::min(rc.uniform(truth.cens_a, truth.cens_b), 1.0);
    }

    int delta = event_time <= censor_time ? 1 : 0;
    double exit = delta ? event_time : censor_time;
    if (!(exit > truth.schedule.front()))
      exit = std::nextafter(truth.schedule.front(),
                            std::numeric_limits<double>::infinity());

    Rng re(truth.seed, static_cast<std::uint64_t>(i), kNoise);
    std::vector<double> times;
    std::vector<double> yvals;
    double sd = std::sqrt(truth.sigma2);
    for (double tk : truth.schedule) {
      double eps = re.normal();  // consumed on the full grid for coupling
      if (tk < exit) {
        times.push_back(tk);
        yvals.push_back(true_trajectory(truth, d, tk) + sd * eps);
      }
    }

    std::string sid = "s" + std::to_string(i + 1);
    int begin = ds.n_rows();
    for (std::size_t k = 0; k < times.size(); ++k) {
      ds.id.push_back(sid);
      ds.tstart.push_back(times[k]);
      ds.tstop.push_back(k + 1 < times.size() ? times[k + 1] : exit);
      ds.event.push_back(k + 1 == times.size() ? delta : 0);
      ds.values["y"].push_back(yvals[k]);
      for (std::size_t c = 0; c < truth.covariates.size(); ++c)
        ds.values[truth.covariates[c].name].push_back(d.cov[c]);
    }
    ds.subject_ids.push_back(sid);
    ds.groups.emplace_back(begin, ds.n_rows());
  }
  ds.validate();
  return ds;
}

}  // namespace jointhaz

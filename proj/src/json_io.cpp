#include "jointhaz/json_io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "jointhaz/errors.hpp"

namespace jointhaz {

namespace {

using nlohmann::json;

std::vector<double> to_vec(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd from_vec(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), v.size());
}

json q_to_json(const Eigen::Matrix2d& Q) {
  return json::array({json::array({Q(0, 0), Q(0, 1)}),
                      json::array({Q(1, 0), Q(1, 1)})});
}

Eigen::Matrix2d q_from_json(const json& j) {
  Eigen::Matrix2d Q;
  Q << j[0][0].get<double>(), j[0][1].get<double>(), j[1][0].get<double>(),
      j[1][1].get<double>();
  return Q;
}

json coef_table(const std::vector<std::string>& names, const Eigen::VectorXd& est,
                const Eigen::VectorXd& se) {
  json out = json::array();
  for (std::size_t j = 0; j < names.size(); ++j) {
    json row;
    row["name"] = names[j];
    row["estimate"] = est(j);
    if (se.size() == est.size()) row["se"] = se(j);
    out.push_back(row);
  }
  return out;
}

json assoc_to_json(const AssociationSpec& a) {
  json j;
  switch (a.kind) {
    case AssociationSpec::Value: j["kind"] = "value"; break;
    case AssociationSpec::Slope: j["kind"] = "slope"; break;
    case AssociationSpec::ValueAndSlope: j["kind"] = "both"; break;
    case AssociationSpec::Cumulative: j["kind"] = "cumulative"; break;
    case AssociationSpec::Lagged:
      j["kind"] = "lagged";
      j["lag"] = a.lag;
      break;
  }
  return j;
}

AssociationSpec assoc_from_json(const json& j) {
  std::string kind = j.value("kind", std::string("value"));
  AssociationSpec a;
  if (kind == "lagged") {
    a.kind = AssociationSpec::Lagged;
    a.lag = j.value("lag", 0.0);
    if (a.lag < 0.0) throw DataError("association: lag must be >= 0");
  } else {
    a = AssociationSpec::parse(kind);
  }
  return a;
}

}  // namespace

JointSpec joint_spec_from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("model spec: invalid JSON: ") + e.what());
  }
  JointSpec spec;
  if (!j.contains("longitudinal"))
    throw DataError("model spec: missing 'longitudinal'");
  const auto& lj = j["longitudinal"];
  spec.lmm.outcome = lj.at("outcome").get<std::string>();
  spec.lmm.covariates = lj.value("covariates", std::vector<std::string>{});
  spec.lmm.time_degree = lj.value("time_degree", 2);
  spec.lmm.random_effects = lj.value("random_effects", true);
  if (j.contains("survival"))
    spec.surv_covariates =
        j["survival"].value("covariates", std::vector<std::string>{});
  if (j.contains("association")) spec.assoc = assoc_from_json(j["association"]);
  if (j.contains("baseline")) {
    spec.baseline.degree = j["baseline"].value("degree", 3);
    spec.baseline.interior_knots = j["baseline"].value("interior_knots", 5);
  }
  spec.gh_nodes = j.value("gh_nodes", 9);
  spec.gl_nodes = j.value("gl_nodes", 15);
  spec.max_em_iter = j.value("max_em_iter", 200);
  spec.max_direct_iter = j.value("max_direct_iter", 100);
  return spec;
}

JointSpec joint_spec_from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open model spec: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return joint_spec_from_json_string(ss.str());
}

std::string lmm_fit_to_json(const LmmFit& fit) {
  json j;
  j["model"] = "lmm";
  j["coefficients"] = coef_table(fit.coef_names, fit.beta, fit.se_beta);
  j["Q"] = q_to_json(fit.Q);
  j["sigma2"] = fit.sigma2;
  j["loglik"] = fit.loglik;
  j["iterations"] = fit.iterations;
  j["converged"] = fit.converged;
  return j.dump(2) + "\n";
}

std::string cox_fit_to_json(const CoxFit& fit) {
  json j;
  j["model"] = fit.spec.outcome_as_tvc.empty() ? "cox" : "tvc";
  j["coefficients"] = coef_table(fit.coef_names, fit.gamma, fit.se);
  j["loglik"] = fit.loglik;
  j["iterations"] = fit.iterations;
  j["converged"] = fit.converged;
  json flags = json::array();
  for (bool b : fit.monotone_flag) flags.push_back(b);
  j["monotone_likelihood_flag"] = flags;
  return j.dump(2) + "\n";
}

std::string twostage_fit_to_json(const TwoStageFit& fit) {
  json j;
  j["model"] = "twostage";
  j["stage1"] = json::parse(lmm_fit_to_json(fit.stage1));
  j["stage2"] = json::parse(cox_fit_to_json(fit.stage2));
  j["trajectory_coefficient"] = fit.trajectory_name;
  j["se_understated"] = fit.understated_se;
  return j.dump(2) + "\n";
}

std::string joint_fit_to_json(const JointFit& fit) {
  json j;
  j["model"] = "joint";
  json spec;
  spec["longitudinal"] = {{"outcome", fit.spec.lmm.outcome},
                          {"covariates", fit.spec.lmm.covariates},
                          {"time_degree", fit.spec.lmm.time_degree},
                          {"random_effects", fit.spec.lmm.random_effects}};
  spec["survival"] = {{"covariates", fit.spec.surv_covariates}};
  spec["association"] = assoc_to_json(fit.spec.assoc);
  spec["baseline"] = {{"degree", fit.spec.baseline.degree},
                      {"interior_knots", fit.spec.baseline.interior_knots}};
  spec["gh_nodes"] = fit.spec.gh_nodes;
  spec["gl_nodes"] = fit.spec.gl_nodes;
  j["spec"] = spec;
  j["longitudinal"] = coef_table(fit.beta_names, fit.beta, fit.se_beta);
  j["survival"] = coef_table(fit.gamma_names, fit.gamma, fit.se_gamma);
  j["association"] = coef_table(fit.alpha_names, fit.alpha, fit.se_alpha);
  j["Q"] = q_to_json(fit.Q);
  j["sigma2"] = fit.sigma2;
  j["baseline_spline"] = {{"degree", fit.basis.degree()},
                          {"interior", fit.basis.interior()},
                          {"lo", fit.basis.lo()},
                          {"hi", fit.basis.hi()},
                          {"coefficients", to_vec(fit.omega)},
                          {"se", to_vec(fit.se_omega)}};
  j["loglik"] = fit.loglik;
  j["aic"] = fit.aic;
  j["n_free_params"] = fit.n_free_params;
  j["em_iterations"] = fit.em_iterations;
  j["direct_iterations"] = fit.direct_iterations;
  j["converged"] = fit.converged;
  j["se_reliable"] = fit.se_reliable;
  j["trace"] = fit.trace;
  json subs = json::array();
  for (std::size_t i = 0; i < fit.subject_ids.size(); ++i) {
    json s;
    s["id"] = fit.subject_ids[i];
    s["mode"] = {fit.subjects[i].mode(0), fit.subjects[i].mode(1)};
    s["cov"] = q_to_json(fit.subjects[i].cov);
    subs.push_back(s);
  }
  j["random_effects"] = subs;
  return j.dump(2) + "\n";
}

JointFit joint_fit_from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("fit file: invalid JSON: ") + e.what());
  }
  if (j.value("model", std::string()) != "joint")
    throw DataError("fit file: not a joint-model fit");
  JointFit fit;
  const auto& spec = j.at("spec");
  fit.spec.lmm.outcome = spec.at("longitudinal").at("outcome").get<std::string>();
  fit.spec.lmm.covariates =
      spec.at("longitudinal").value("covariates", std::vector<std::string>{});
  fit.spec.lmm.time_degree = spec.at("longitudinal").value("time_degree", 2);
  fit.spec.lmm.random_effects =
      spec.at("longitudinal").value("random_effects", true);
  fit.spec.surv_covariates =
      spec.at("survival").value("covariates", std::vector<std::string>{});
  fit.spec.assoc = assoc_from_json(spec.at("association"));
  fit.spec.baseline.degree = spec.at("baseline").value("degree", 3);
  fit.spec.baseline.interior_knots = spec.at("baseline").value("interior_knots", 5);
  fit.spec.gh_nodes = spec.value("gh_nodes", 9);
  fit.spec.gl_nodes = spec.value("gl_nodes", 15);

  auto read_table = [](const json& tbl, std::vector<std::string>* names,
                       Eigen::VectorXd* est, Eigen::VectorXd* se) {
    int n = static_cast<int>(tbl.size());
    est->resize(n);
    se->resize(n);
    for (int k = 0; k < n; ++k) {
      names->push_back(tbl[k].at("name").get<std::string>());
      (*est)(k) = tbl[k].at("estimate").get<double>();
      (*se)(k) = tbl[k].value("se", std::numeric_limits<double>::quiet_NaN());
    }
  };
  read_table(j.at("longitudinal"), &fit.beta_names, &fit.beta, &fit.se_beta);
  read_table(j.at("survival"), &fit.gamma_names, &fit.gamma, &fit.se_gamma);
  read_table(j.at("association"), &fit.alpha_names, &fit.alpha, &fit.se_alpha);
  fit.Q = q_from_json(j.at("Q"));
  fit.sigma2 = j.at("sigma2").get<double>();
  const auto& bj = j.at("baseline_spline");
  fit.basis = BSplineBasis(bj.at("degree").get<int>(),
                           bj.at("interior").get<std::vector<double>>(),
                           bj.at("lo").get<double>(), bj.at("hi").get<double>());
  fit.omega = from_vec(bj.at("coefficients").get<std::vector<double>>());
  fit.se_omega = from_vec(bj.value("se", std::vector<double>{}));
  fit.loglik = j.value("loglik", 0.0);
  fit.aic = j.value("aic", 0.0);
  fit.n_free_params = j.value("n_free_params", 0);
  fit.em_iterations = j.value("em_iterations", 0);
  fit.direct_iterations = j.value("direct_iterations", 0);
  fit.converged = j.value("converged", false);
  fit.se_reliable = j.value("se_reliable", false);
  if (j.contains("trace")) fit.trace = j["trace"].get<std::vector<double>>();
  if (j.contains("random_effects")) {
    for (const auto& s : j["random_effects"]) {
      fit.subject_ids.push_back(s.at("id").get<std::string>());
      LmmSubjectEstimates est;
      est.mode << s.at("mode")[0].get<double>(), s.at("mode")[1].get<double>();
      est.cov = q_from_json(s.at("cov"));
      fit.subjects.push_back(est);
    }
  }
  return fit;
}

JointFit joint_fit_from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open fit file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return joint_fit_from_json_string(ss.str());
}

std::string standardization_to_json(const StandardizationReport& report) {
  json j;
  j["time_scale"] = report.time_scale;
  json cols;
  for (const auto& [name, ms] : report.column_moments)
    cols[name] = {{"mean", ms.first}, {"sd", ms.second}};
  j["columns"] = cols;
  return j.dump(2) + "\n";
}

StandardizationReport standardization_from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open standardization report: " + path);
  json j;
  in >> j;
  StandardizationReport report;
  report.time_scale = j.value("time_scale", 1.0);
  if (j.contains("columns")) {
    for (auto it = j["columns"].begin(); it != j["columns"].end(); ++it)
      report.column_moments[it.key()] = {it.value().at("mean").get<double>(),
                                         it.value().at("sd").get<double>()};
  }
  return report;
}

void write_file_atomic(const std::string& path, const std::string& content) {
  std::filesystem::path target(path);
  std::filesystem::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw DataError("cannot write file: " + tmp.string());
    out << content;
    if (!out) throw DataError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, target);
}

}  // namespace jointhaz

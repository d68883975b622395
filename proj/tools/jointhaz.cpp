// Command-line front end: simulate, fit (lmm / cox / tvc / twostage / joint),
// decompose, predict, update, compare, mse-harness, emit-plot-data.
// Exit codes: 0 ok, 1 usage error, 2 data error, 3 convergence failure
// (partial outputs still written, flagged in the JSON).

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "jointhaz/csv.hpp"
#include "jointhaz/dataset.hpp"
#include "jointhaz/errors.hpp"
#include "jointhaz/json_io.hpp"
#include "jointhaz/plotdata.hpp"
#include "jointhaz/predict.hpp"
#include "jointhaz/sim.hpp"
#include "jointhaz/threading.hpp"

namespace fs = std::filesystem;
using namespace jointhaz;

namespace {

struct CommonOpts {
  std::string data_path, schema_path, spec_path, out_dir;
  std::string std_columns;   // comma separated, standardized before fitting
  bool rescale = false;
  int threads = 0;
  std::uint64_t seed = 1;
  int verbosity = 0;
};

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw UsageError(what + " path not set");
  if (!fs::exists(path)) throw UsageError(what + " file does not exist: " + path);
}

std::vector<std::string> split_csv_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  for (const auto& item : split_csv_list(s)) {
    try {
      out.push_back(std::stod(item));
    } catch (...) {
      throw UsageError("bad number in list: '" + item + "'");
    }
  }
  return out;
}

struct LoadedData {
  Dataset ds;
  StandardizationReport report;
  double time_scale = 1.0;
};

LoadedData load_and_prepare(const CommonOpts& c) {
  require_file(c.data_path, "data");
  require_file(c.schema_path, "schema");
  LoadedData ld;
  ld.ds = load_csv(c.data_path, Schema::from_json_file(c.schema_path));
  if (c.rescale) {
    auto [rds, scale] = rescale_time(ld.ds);
    ld.ds = std::move(rds);
    ld.time_scale = scale;
  }
  auto cols = split_csv_list(c.std_columns);
  if (!cols.empty()) {
    auto [sds, report] = standardize(ld.ds, cols);
    ld.ds = std::move(sds);
    ld.report = std::move(report);
  }
  ld.report.time_scale = c.rescale ? ld.time_scale : ld.ds.max_tstop();
  return ld;
}

void ensure_outdir(const std::string& dir) {
  if (dir.empty()) throw UsageError("--out not set");
  fs::create_directories(dir);
}

void write_standardization(const CommonOpts& c, const LoadedData& ld) {
  if (!c.std_columns.empty() || c.rescale)
    write_file_atomic(c.out_dir + "/standardization.json",
                      standardization_to_json(ld.report));
}

double wald_p(double estimate, double se) {
  if (!(se > 0.0) || !std::isfinite(se)) return std::nan("");
  double z = std::abs(estimate / se);
  return std::erfc(z / std::sqrt(2.0));
}

std::string trace_csv(const JointFit& fit) {
  std::ostringstream out;
  out << "iter,phase,loglik\n";
  for (std::size_t k = 0; k < fit.trace.size(); ++k)
    out << k << ',' << (static_cast<int>(k) < fit.em_iterations ? "em" : "direct")
        << ',' << format_double(fit.trace[k]) << '\n';
  return out.str();
}

std::string baseline_csv(const CoxFit& fit) {
  std::ostringstream out;
  out << "t,cumhaz\n";
  double acc = 0.0;
  for (std::size_t k = 0; k < fit.baseline_times.size(); ++k) {
    acc += fit.baseline_jumps[k];
    out << format_double(fit.baseline_times[k]) << ',' << format_double(acc)
        << '\n';
  }
  return out.str();
}

// comparison table mirroring the side-by-side layout: one row per
// (variable, model) with estimate, se, p
std::string comparison_csv(const CoxFit& tvc, const TwoStageFit& two,
                           const JointFit& joint) {
  std::ostringstream out;
  out << "variable,model,estimate,se,p\n";
  auto emit = [&](const std::string& var, const std::string& model, double est,
                  double se) {
    out << var << ',' << model << ',' << format_double6(est) << ','
        << format_double6(se) << ',' << format_double6(wald_p(est, se)) << '\n';
  };
  for (std::size_t j = 0; j < tvc.coef_names.size(); ++j)
    emit(tvc.coef_names[j], "tvc", tvc.gamma(j), tvc.se(j));
  for (std::size_t j = 0; j < two.stage2.coef_names.size(); ++j)
    emit(two.stage2.coef_names[j], "twostage", two.stage2.gamma(j),
         two.stage2.se(j));
  for (std::size_t j = 0; j < joint.gamma_names.size(); ++j)
    emit(joint.gamma_names[j], "joint", joint.gamma(j), joint.se_gamma(j));
  for (int k = 0; k < joint.alpha.size(); ++k)
    emit(joint.spec.lmm.outcome, "joint", joint.alpha(k), joint.se_alpha(k));
  return out.str();
}

SubjectHistory history_for_id(const Dataset& ds, const std::string& id,
                              const std::string& outcome) {
  int idx = ds.subject_index(id);
  if (idx < 0) throw DataError("subject id '" + id + "' not found");
  return extract_history(ds, idx, outcome);
}

int run(int argc, char** argv) {
  CLI::App app{"joint models for longitudinal and time-to-event data"};
  app.require_subcommand(1);

  CommonOpts c;
  std::string truth_path, fit_path, covariate, subject_id, horizons_str, kind;
  std::string holdout_path, association_override, std_report_path;
  double add_time = 0.0, add_value = 0.0;
  bool raw_times = false;
  int draws = 500;

  auto add_common = [&](CLI::App* sub, bool needs_data = true) {
    if (needs_data) {
      sub->add_option("--data", c.data_path, "input CSV (start-stop-event)");
      sub->add_option("--schema", c.schema_path, "schema JSON sidecar");
    }
    sub->add_option("--out", c.out_dir, "output directory");
    sub->add_option("--threads", c.threads,
                    "worker threads (0 = auto, env JOINTHAZ_THREADS)");
    sub->add_option("--seed", c.seed, "random seed");
    sub->add_flag("-v,--verbose", c.verbosity, "progress on stderr");
    sub->add_option("--standardize", c.std_columns,
                    "comma-separated columns to z-score before fitting");
    sub->add_flag("--rescale-time", c.rescale, "divide times by the max tstop");
  };

  auto* sim_cmd = app.add_subcommand("simulate", "generate synthetic data");
  sim_cmd->add_option("--truth", truth_path, "truth config JSON")->required();
  std::string sim_out;
  sim_cmd->add_option("--out", sim_out, "output CSV path")->required();
  bool sim_seed_set = false;
  sim_cmd->add_option("--seed", c.seed, "override the config seed")
      ->each([&](const std::string&) { sim_seed_set = true; });

  auto* lmm_cmd = app.add_subcommand("fit-lmm", "linear mixed model");
  add_common(lmm_cmd);
  lmm_cmd->add_option("--spec", c.spec_path, "model spec JSON")->required();

  auto* cox_cmd = app.add_subcommand("fit-cox", "Cox PH, no longitudinal TVC");
  add_common(cox_cmd);
  cox_cmd->add_option("--spec", c.spec_path, "model spec JSON")->required();

  auto* tvc_cmd = app.add_subcommand("fit-tvc", "Cox PH with LVCF outcome TVC");
  add_common(tvc_cmd);
  tvc_cmd->add_option("--spec", c.spec_path, "model spec JSON")->required();

  auto* two_cmd = app.add_subcommand("fit-twostage", "LMM then Cox plug-in");
  add_common(two_cmd);
  two_cmd->add_option("--spec", c.spec_path, "model spec JSON")->required();

  auto* joint_cmd = app.add_subcommand("fit-joint", "joint model (EM + polish)");
  add_common(joint_cmd);
  joint_cmd->add_option("--spec", c.spec_path, "model spec JSON")->required();
  joint_cmd->add_option("--association", association_override,
                        "value|slope|both|cumulative|lagged:<c>");
  joint_cmd->add_option("--std-report", std_report_path,
                        "standardization report for raw-unit lag conversion");
  joint_cmd->add_flag("--raw-times", raw_times,
                      "lag given in raw time units (needs --std-report)");

  auto* dec_cmd = app.add_subcommand("decompose", "effect decomposition");
  dec_cmd->add_option("--fit", fit_path, "joint fit JSON")->required();
  dec_cmd->add_option("--covariate", covariate, "covariate name")->required();
  dec_cmd->add_option("--out", c.out_dir, "output directory")->required();

  auto* pred_cmd = app.add_subcommand("predict", "dynamic survival prediction");
  add_common(pred_cmd);
  pred_cmd->add_option("--fit", fit_path, "joint fit JSON")->required();
  pred_cmd->add_option("--id", subject_id, "subject id in --data")->required();
  pred_cmd->add_option("--horizons", horizons_str, "comma-separated u grid")
      ->required();
  pred_cmd->add_option("--draws", draws, "Monte-Carlo draws");
  pred_cmd->add_option("--std-report", std_report_path,
                       "standardization report for raw-unit horizons");
  pred_cmd->add_flag("--raw-times", raw_times,
                     "horizons in raw time units (needs --std-report)");

  auto* upd_cmd = app.add_subcommand("update", "prediction with a new measurement");
  add_common(upd_cmd);
  upd_cmd->add_option("--fit", fit_path, "joint fit JSON")->required();
  upd_cmd->add_option("--id", subject_id, "subject id in --data")->required();
  upd_cmd->add_option("--horizons", horizons_str, "comma-separated u grid")
      ->required();
  upd_cmd->add_option("--add-time", add_time, "new measurement time")->required();
  upd_cmd->add_option("--add-value", add_value, "new measurement value")
      ->required();
  upd_cmd->add_option("--draws", draws, "Monte-Carlo draws");

  auto* cmp_cmd = app.add_subcommand("compare", "tvc vs two-stage vs joint");
  add_common(cmp_cmd);
  cmp_cmd->add_option("--spec", c.spec_path, "model spec JSON")->required();

  auto* mse_cmd = app.add_subcommand("mse-harness", "predictive MSE comparison");
  add_common(mse_cmd);
  mse_cmd->add_option("--spec", c.spec_path, "model spec JSON")->required();
  mse_cmd->add_option("--holdout", holdout_path, "held-out CSV")->required();
  mse_cmd->add_option("--horizons", horizons_str,
                      "comma-separated horizons since last measurement")
      ->required();
  mse_cmd->add_option("--draws", draws, "Monte-Carlo draws per subject");

  auto* plot_cmd = app.add_subcommand("emit-plot-data", "tidy CSVs for figures");
  add_common(plot_cmd);
  plot_cmd->add_option("--kind", kind, "trajectory|prediction|mse")->required();
  plot_cmd->add_option("--outcome", covariate, "outcome column (trajectory)");
  plot_cmd->add_option("--fit", fit_path, "joint fit JSON (prediction)");
  plot_cmd->add_option("--id", subject_id, "subject id (prediction)");
  plot_cmd->add_option("--horizons", horizons_str, "u grid (prediction)");
  plot_cmd->add_option("--draws", draws, "Monte-Carlo draws");

  CLI11_PARSE(app, argc, argv);
  int threads = resolve_threads(c.threads);

  if (sim_cmd->parsed()) {
    require_file(truth_path, "truth");
    SimTruth truth = SimTruth::from_json_file(truth_path);
    if (sim_seed_set) truth.seed = c.seed;
    Dataset ds = simulate(truth);
    fs::path out(sim_out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_csv(sim_out + ".tmp", ds);
    fs::rename(sim_out + ".tmp", sim_out);
    std::string schema_out = sim_out + ".schema.json";
    std::string schema_text = R"({"columns": {"id": "id", "tstart": "time", "tstop": "time", "event": "event", "y": "numeric")";
    for (const auto& cov : truth.covariates)
      schema_text += ", \"" + cov.name + "\": \"numeric\"";
    schema_text += "}}\n";
    write_file_atomic(schema_out, schema_text);
    if (c.verbosity)
      std::cerr << "simulated " << ds.n_subjects() << " subjects, "
                << ds.n_events() << " events\n";
    return 0;
  }

  if (lmm_cmd->parsed()) {
    LoadedData ld = load_and_prepare(c);
    JointSpec spec = joint_spec_from_json_file(c.spec_path);
    ensure_outdir(c.out_dir);
    LmmFit fit = fit_lmm(ld.ds, spec.lmm, threads);
    write_file_atomic(c.out_dir + "/fit.json", lmm_fit_to_json(fit));
    write_standardization(c, ld);
    return fit.converged ? 0 : 3;
  }

  if (cox_cmd->parsed() || tvc_cmd->parsed()) {
    LoadedData ld = load_and_prepare(c);
    JointSpec spec = joint_spec_from_json_file(c.spec_path);
    ensure_outdir(c.out_dir);
    CoxSpec cs;
    cs.covariates = spec.surv_covariates;
    if (tvc_cmd->parsed()) cs.outcome_as_tvc = spec.lmm.outcome;
    CoxFit fit = fit_cox(ld.ds, cs, threads);
    write_file_atomic(c.out_dir + "/fit.json", cox_fit_to_json(fit));
    write_file_atomic(c.out_dir + "/baseline.csv", baseline_csv(fit));
    write_standardization(c, ld);
    return fit.converged ? 0 : 3;
  }

  if (two_cmd->parsed()) {
    LoadedData ld = load_and_prepare(c);
    JointSpec spec = joint_spec_from_json_file(c.spec_path);
    ensure_outdir(c.out_dir);
    CoxSpec cs;
    cs.covariates = spec.surv_covariates;
    TwoStageFit fit = fit_twostage(ld.ds, spec.lmm, cs, threads);
    write_file_atomic(c.out_dir + "/fit.json", twostage_fit_to_json(fit));
    write_standardization(c, ld);
    return fit.stage1.converged && fit.stage2.converged ? 0 : 3;
  }

  if (joint_cmd->parsed()) {
    LoadedData ld = load_and_prepare(c);
    JointSpec spec = joint_spec_from_json_file(c.spec_path);
    if (!association_override.empty()) {
      spec.assoc = AssociationSpec::parse(association_override);
      if (spec.assoc.kind == AssociationSpec::Lagged && raw_times) {
        require_file(std_report_path, "standardization report");
        StandardizationReport rep = standardization_from_json_file(std_report_path);
        spec.assoc.lag /= rep.time_scale;
      }
    }
    ensure_outdir(c.out_dir);
    JointFit fit = fit_joint(ld.ds, spec, threads);
    write_file_atomic(c.out_dir + "/fit.json", joint_fit_to_json(fit));
    write_file_atomic(c.out_dir + "/trace.csv", trace_csv(fit));
    write_standardization(c, ld);
    if (c.verbosity)
      std::cerr << "joint fit: loglik " << fit.loglik << ", AIC " << fit.aic
                << ", EM " << fit.em_iterations << " + direct "
                << fit.direct_iterations << " iterations\n";
    return fit.converged ? 0 : 3;
  }

  if (dec_cmd->parsed()) {
    require_file(fit_path, "fit");
    JointFit fit = joint_fit_from_json_file(fit_path);
    ensure_outdir(c.out_dir);
    Decomposition d = decompose(fit, covariate);
    std::ostringstream out;
    out << "{\n  \"covariate\": \"" << d.covariate << "\",\n"
        << "  \"direct\": " << format_double(d.direct) << ",\n"
        << "  \"indirect\": " << format_double(d.indirect) << ",\n"
        << "  \"total\": " << format_double(d.total) << "\n}\n";
    write_file_atomic(c.out_dir + "/decomposition.json", out.str());
    return 0;
  }

  if (pred_cmd->parsed() || upd_cmd->parsed()) {
    require_file(fit_path, "fit");
    JointFit fit = joint_fit_from_json_file(fit_path);
    LoadedData ld = load_and_prepare(c);
    ensure_outdir(c.out_dir);
    SubjectHistory h = history_for_id(ld.ds, subject_id, fit.spec.lmm.outcome);
    std::vector<double> us = parse_double_list(horizons_str);
    if (raw_times) {
      require_file(std_report_path, "standardization report");
      StandardizationReport rep = standardization_from_json_file(std_report_path);
      for (auto& u : us) u /= rep.time_scale;
    }
    PredictOptions po;
    po.draws = draws;
    po.seed = c.seed;
    po.threads = threads;
    DynamicPrediction pred =
        upd_cmd->parsed()
            ? update_prediction(fit, h, add_time, add_value, us, po)
            : predict_survival(fit, h, us, po);
    write_file_atomic(c.out_dir + "/prediction.csv", prediction_panel_csv(pred));
    return 0;
  }

  if (cmp_cmd->parsed()) {
    LoadedData ld = load_and_prepare(c);
    JointSpec spec = joint_spec_from_json_file(c.spec_path);
    ensure_outdir(c.out_dir);
    CoxSpec cs;
    cs.covariates = spec.surv_covariates;
    CoxSpec tvc_spec = cs;
    tvc_spec.outcome_as_tvc = spec.lmm.outcome;
    CoxFit tvc = fit_tvc_model(ld.ds, tvc_spec, threads);
    TwoStageFit two = fit_twostage(ld.ds, spec.lmm, cs, threads);
    JointFit joint = fit_joint(ld.ds, spec, threads);
    write_file_atomic(c.out_dir + "/comparison.csv", comparison_csv(tvc, two, joint));
    write_file_atomic(c.out_dir + "/fit_tvc.json", cox_fit_to_json(tvc));
    write_file_atomic(c.out_dir + "/fit_twostage.json", twostage_fit_to_json(two));
    write_file_atomic(c.out_dir + "/fit_joint.json", joint_fit_to_json(joint));
    write_standardization(c, ld);
    return joint.converged ? 0 : 3;
  }

  if (mse_cmd->parsed()) {
    LoadedData ld = load_and_prepare(c);
    require_file(holdout_path, "holdout");
    Dataset holdout = load_csv(holdout_path, Schema::from_json_file(c.schema_path));
    JointSpec spec = joint_spec_from_json_file(c.spec_path);
    ensure_outdir(c.out_dir);
    CoxSpec cs;
    cs.covariates = spec.surv_covariates;
    CoxSpec tvc_spec = cs;
    tvc_spec.outcome_as_tvc = spec.lmm.outcome;
    CoxFit tvc = fit_tvc_model(ld.ds, tvc_spec, threads);
    TwoStageFit two = fit_twostage(ld.ds, spec.lmm, cs, threads);
    JointFit joint = fit_joint(ld.ds, spec, threads);
    PredictOptions po;
    po.draws = draws;
    po.seed = c.seed;
    po.threads = threads;
    auto rows = mse_harness(joint, two, tvc, holdout, parse_double_list(horizons_str), po);
    write_file_atomic(c.out_dir + "/mse.csv", mse_curve_csv(rows));
    return 0;
  }

  if (plot_cmd->parsed()) {
    ensure_outdir(c.out_dir);
    if (kind == "trajectory") {
      LoadedData ld = load_and_prepare(c);
      if (covariate.empty()) throw UsageError("--outcome required for trajectory");
      write_file_atomic(c.out_dir + "/trajectory.csv",
                        trajectory_panel_csv(ld.ds, covariate));
    } else if (kind == "prediction") {
      require_file(fit_path, "fit");
      JointFit fit = joint_fit_from_json_file(fit_path);
      LoadedData ld = load_and_prepare(c);
      SubjectHistory h = history_for_id(ld.ds, subject_id, fit.spec.lmm.outcome);
      PredictOptions po;
      po.draws = draws;
      po.seed = c.seed;
      po.threads = threads;
      DynamicPrediction pred =
          predict_survival(fit, h, parse_double_list(horizons_str), po);
      write_file_atomic(c.out_dir + "/prediction.csv", prediction_panel_csv(pred));
    } else {
      throw UsageError("emit-plot-data: unknown kind '" + kind +
                       "' (trajectory|prediction)");
    }
    return 0;
  }

  throw UsageError("no subcommand");
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const UsageError& e) {
    std::cerr << "ERROR 1: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "ERROR 2: " << e.what() << "\n";
    return 2;
  } catch (const ConvergenceError& e) {
    std::cerr << "ERROR 3: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "ERROR 2: " << e.what() << "\n";
    return 2;
  }
}

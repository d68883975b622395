#include "jointhaz/twostage.hpp"

#include <memory>

#include "jointhaz/errors.hpp"

namespace jointhaz {

TwoStageFit fit_twostage(const Dataset& ds, const LmmSpec& lmm_spec,
                         const CoxSpec& cox_spec, int threads) {
  if (!cox_spec.outcome_as_tvc.empty())
    throw UsageError("twostage: the trajectory replaces the observed-outcome TVC");

  TwoStageFit fit;
  fit.stage1 = fit_lmm(ds, lmm_spec, threads);
  fit.trajectory_name = lmm_spec.outcome;

  // per-subject trajectory closures over shared state (no per-call lookup)
  auto histories = std::make_shared<std::vector<SubjectHistory>>(
      extract_histories(ds, lmm_spec.outcome));
  auto terms = std::make_shared<std::vector<Term>>(
      expand_terms(ds.schema, lmm_spec.covariates, lmm_spec.time_degree, true));
  auto beta = std::make_shared<Eigen::VectorXd>(fit.stage1.beta);
  auto modes = std::make_shared<std::vector<Eigen::Vector2d>>();
  for (const auto& est : fit.stage1.subjects) modes->push_back(est.mode);

  CoxSpec stage2 = cox_spec;
  DynamicCovariate traj;
  traj.name = lmm_spec.outcome;
  traj.value = [histories, terms, beta, modes](int subject, double t) {
    return trajectory_value_at(*terms, *beta, (*modes)[subject],
                               (*histories)[subject], t);
  };
  stage2.dynamic.push_back(traj);
  fit.stage2 = fit_cox(ds, stage2, threads);
  fit.understated_se = true;
  return fit;
}

}  // namespace jointhaz

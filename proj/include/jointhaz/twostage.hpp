#pragma once

#include "jointhaz/cox.hpp"
#include "jointhaz/lmm.hpp"

namespace jointhaz {

// Plug-in baseline: LMM first, then a Cox model with the predicted
// trajectory m_hat_i(t) (empirical Bayes) evaluated at risk-set event times.
// Stage-2 standard errors ignore stage-1 uncertainty by construction.
struct TwoStageFit {
  LmmFit stage1;
  CoxFit stage2;
  bool understated_se = true;
  std::string trajectory_name;  // coefficient name of m_hat in stage 2
};

TwoStageFit fit_twostage(const Dataset& ds, const LmmSpec& lmm_spec,
                         const CoxSpec& cox_spec, int threads = 1);

}  // namespace jointhaz

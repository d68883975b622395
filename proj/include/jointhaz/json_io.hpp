#pragma once

#include <string>

#include "jointhaz/cox.hpp"
#include "jointhaz/dataset.hpp"
#include "jointhaz/joint.hpp"
#include "jointhaz/lmm.hpp"
#include "jointhaz/predict.hpp"
#include "jointhaz/twostage.hpp"

namespace jointhaz {

// model spec (longitudinal + survival + association + baseline) <-> JSON
JointSpec joint_spec_from_json_file(const std::string& path);
JointSpec joint_spec_from_json_string(const std::string& text);

std::string lmm_fit_to_json(const LmmFit& fit);
std::string cox_fit_to_json(const CoxFit& fit);
std::string twostage_fit_to_json(const TwoStageFit& fit);
std::string joint_fit_to_json(const JointFit& fit);
JointFit joint_fit_from_json_file(const std::string& path);
JointFit joint_fit_from_json_string(const std::string& text);

std::string standardization_to_json(const StandardizationReport& report);
StandardizationReport standardization_from_json_file(const std::string& path);

// write-temp-then-rename; target directory must exist
void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace jointhaz

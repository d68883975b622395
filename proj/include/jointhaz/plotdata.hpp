#pragma once

#include <string>
#include <vector>

#include "jointhaz/dataset.hpp"
#include "jointhaz/predict.hpp"

namespace jointhaz {

// tidy CSV text behind the figure styles; no plotting here

// columns (u, mean, lo, hi, s)
std::string prediction_panel_csv(const DynamicPrediction& pred);

// columns (model, horizon, mse, n)
std::string mse_curve_csv(const std::vector<MseRow>& rows);

// smoothed mean outcome trajectory by event group: binned means over the
// measurement grid, bin width 0.05; columns (group, t_bin, mean_y, n)
std::string trajectory_panel_csv(const Dataset& ds, const std::string& outcome,
                                 double bin_width = 0.05);

}  // namespace jointhaz

#include "jointhaz/plotdata.hpp"

#include <cmath>
#include <map>
#include <sstream>

#include "jointhaz/csv.hpp"
#include "jointhaz/errors.hpp"

namespace jointhaz {

std::string prediction_panel_csv(const DynamicPrediction& pred) {
  std::ostringstream out;
  out << "u,mean,lo,hi,s\n";
  for (std::size_t j = 0; j < pred.horizon.size(); ++j)
    out << format_double(pred.horizon[j]) << ',' << format_double(pred.mean[j])
        << ',' << format_double(pred.lo[j]) << ',' << format_double(pred.hi[j])
        << ',' << format_double(pred.s) << '\n';
  return out.str();
}

std::string mse_curve_csv(const std::vector<MseRow>& rows) {
  std::ostringstream out;
  out << "model,horizon,mse,n\n";
  for (const auto& r : rows)
    out << r.model << ',' << format_double(r.horizon) << ','
        << format_double(r.mse) << ',' << r.n << '\n';
  return out.str();
}

std::string trajectory_panel_csv(const Dataset& ds, const std::string& outcome,
                                 double bin_width) {
  if (!(bin_width > 0.0)) throw UsageError("trajectory panel: bin width must be > 0");
  const auto& y = ds.values.at(outcome);

  struct Bin {
    double sum = 0.0;
    int n = 0;
  };
  std::map<std::pair<int, int>, Bin> bins;  // (event group, bin index)
  for (int g = 0; g < ds.n_subjects(); ++g) {
    auto [lo, hi] = ds.groups[g];
    int group = ds.event[hi - 1];
    for (int r = lo; r < hi; ++r) {
      if (std::isnan(y[r])) continue;
      // nudge so grid times landing on a bin edge fall into the right bin
      int bin = static_cast<int>(std::floor(ds.tstart[r] / bin_width + 1e-9));
      auto& b = bins[{group, bin}];
      b.sum += y[r];
      b.n += 1;
    }
  }
  std::ostringstream out;
  out << "group,t_bin,mean_y,n\n";
  for (const auto& [key, b] : bins)
    out << (key.first ? "event" : "censored") << ','
        << format_double(key.second * bin_width) << ','
        << format_double(b.sum / b.n) << ',' << b.n << '\n';
  return out.str();
}

}  // namespace jointhaz

#include "jointhaz/bspline.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace jointhaz {

BSplineBasis::BSplineBasis(int degree, std::vector<double> interior_knots,
                           double lo, double hi)
    : degree_(degree), lo_(lo), hi_(hi), interior_(std::move(interior_knots)) {
  if (degree < 0) throw std::invalid_argument("bspline: degree must be >= 0");
  if (!(lo < hi)) throw std::invalid_argument("bspline: need lo < hi");
  for (std::size_t i = 0; i < interior_.size(); ++i) {
    if (!(interior_[i] > lo && interior_[i] < hi))
      throw std::invalid_argument("bspline: interior knot outside (lo, hi)");
    if (i > 0 && !(interior_[i] > interior_[i - 1]))
      throw std::invalid_argument("bspline: knots must be strictly increasing");
  }
  knots_.clear();
  for (int i = 0; i <= degree_; ++i) knots_.push_back(lo);
  for (double k : interior_) knots_.push_back(k);
  for (int i = 0; i <= degree_; ++i) knots_.push_back(hi);
  dim_ = static_cast<int>(knots_.size()) - degree_ - 1;
}

Eigen::VectorXd BSplineBasis::eval(double t) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(dim_);
  if (dim_ == 0) return out;
  double x = std::min(std::max(t, lo_), hi_);

  // knot span index mu with knots_[mu] <= x < knots_[mu+1]; clamp the right end
  int mu = degree_;
  int last = static_cast<int>(knots_.size()) - degree_ - 2;
  while (mu < last && x >= knots_[mu + 1]) ++mu;

  // Cox-de Boor triangle over the degree+1 active functions
  std::vector<double> vals(degree_ + 1, 0.0);
  vals[0] = 1.0;
  for (int d = 1; d <= degree_; ++d) {
    double saved = 0.0;
    for (int r = 0; r < d; ++r) {
      double left = knots_[mu - d + 1 + r];
      double right = knots_[mu + 1 + r];
      double term = (right > left) ? vals[r] / (right - left) : 0.0;
      vals[r] = saved + (right - x) * term;
      saved = (x - left) * term;
    }
    vals[d] = saved;
  }
  for (int r = 0; r <= degree_; ++r) {
    int idx = mu - degree_ + r;
    if (idx >= 0 && idx < dim_) out(idx) = vals[r];
  }
  return out;
}

BSplineBasis BSplineBasis::from_event_quantiles(std::vector<double> event_times,
                                                int interior, int degree,
                                                double lo, double hi) {
  std::sort(event_times.begin(), event_times.end());
  event_times.erase(std::unique(event_times.begin(), event_times.end()),
                    event_times.end());
  std::vector<double> knots;
  if (static_cast<int>(event_times.size()) > interior) {
    for (int j = 1; j <= interior; ++j) {
      double p = static_cast<double>(j) / (interior + 1);
      double idx = p * (event_times.size() - 1);
      int i0 = static_cast<int>(std::floor(idx));
      int i1 = std::min<int>(i0 + 1, static_cast<int>(event_times.size()) - 1);
      double w = idx - i0;
      double q = (1.0 - w) * event_times[i0] + w * event_times[i1];
      if (q > lo && q < hi) knots.push_back(q);
    }
    std::sort(knots.begin(), knots.end());
    knots.erase(std::unique(knots.begin(), knots.end()), knots.end());
  }
  if (static_cast<int>(knots.size()) < interior) {
    knots.clear();
    for (int j = 1; j <= interior; ++j)
      knots.push_back(lo + (hi - lo) * j / (interior + 1));
  }
  return BSplineBasis(degree, knots, lo, hi);
}

}  // namespace jointhaz

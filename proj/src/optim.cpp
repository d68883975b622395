#include "jointhaz/optim.hpp"

#include <cmath>
#include <limits>

namespace jointhaz {

OptimResult bfgs_maximize(const Objective& obj, const Eigen::VectorXd& x0,
                          const OptimOptions& opts) {
  const int n = static_cast<int>(x0.size());
  OptimResult res;
  res.x = x0;

  Eigen::VectorXd g(n);
  double f = obj(res.x, &g);
  if (!std::isfinite(f)) f = -std::numeric_limits<double>::infinity();
  res.f = f;
  res.trace.push_back(f);

  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(n, n);  // inverse Hessian approx
  const double c1 = 1e-4;
  int stalled = 0;  // consecutive sub-tolerance objective changes

  for (int iter = 0; iter < opts.max_iter; ++iter) {
    res.iterations = iter + 1;
    res.grad_norm = g.lpNorm<Eigen::Infinity>();
    if (res.grad_norm < opts.grad_tol) {
      res.converged = true;
      res.iterations = iter;
      break;
    }

    Eigen::VectorXd d = H * g;
    double slope = g.dot(d);
    if (!(slope > 0.0)) {  // not an ascent direction: reset
      H.setIdentity();
      d = g;
      slope = g.dot(d);
      if (!(slope > 0.0)) break;  // zero gradient
    }

    // backtracking Armijo
    double step = 1.0;
    double f_new = -std::numeric_limits<double>::infinity();
    Eigen::VectorXd x_new, g_new(n);
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = res.x + step * d;
      f_new = obj(x_new, &g_new);
      if (std::isfinite(f_new) && f_new >= f + c1 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      res.converged = res.grad_norm < 1e-3;  // stalled near optimum
      break;
    }

    Eigen::VectorXd s = x_new - res.x;
    Eigen::VectorXd yv = g_new - g;  // gradient change (note: ascent)
    double sy = -s.dot(yv);          // curvature for the maximization problem
    if (sy > 1e-12 * s.norm() * yv.norm()) {
      // standard BFGS inverse update on the negated problem
      Eigen::VectorXd Hy = H * (-yv);
      double yHy = (-yv).dot(Hy);
      H += ((sy + yHy) / (sy * sy)) * (s * s.transpose()) -
           (Hy * s.transpose() + s * Hy.transpose()) / sy;
    }

    double df = f_new - f;
    res.x = x_new;
    f = f_new;
    g = g_new;
    res.f = f;
    res.trace.push_back(f);
    if (std::abs(df) <= opts.rel_tol * (1.0 + std::abs(f))) {
      ++stalled;
      // converged outright on a small gradient, or after three consecutive
      // sub-tolerance steps (flat ridge at floating-point resolution)
      if (g.lpNorm<Eigen::Infinity>() < opts.grad_tol || stalled >= 3) {
        res.converged = true;
        break;
      }
    } else {
      stalled = 0;
    }
  }
  res.grad_norm = g.lpNorm<Eigen::Infinity>();
  return res;
}

}  // namespace jointhaz

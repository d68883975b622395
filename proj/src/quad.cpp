#include "jointhaz/quad.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <stdexcept>

namespace jointhaz {

namespace {

// Golub-Welsch: nodes are eigenvalues of the Jacobi matrix, weights are
// mu0 * (first eigenvector component)^2.
QuadRule golub_welsch(const Eigen::VectorXd& diag, const Eigen::VectorXd& offdiag,
                      double mu0) {
  int n = static_cast<int>(diag.size());
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    J(i, i) = diag(i);
    if (i + 1 < n) {
      J(i, i + 1) = offdiag(i);
      J(i + 1, i) = offdiag(i);
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  QuadRule r;
  r.nodes = es.eigenvalues();
  r.weights.resize(n);
  for (int i = 0; i < n; ++i) {
    double v = es.eigenvectors()(0, i);
    r.weights(i) = mu0 * v * v;
  }
  return r;
}

QuadRule make_legendre(int n) {
  Eigen::VectorXd d = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd e(n - 1 > 0 ? n - 1 : 0);
  for (int k = 1; k < n; ++k) {
    double kk = static_cast<double>(k);
    e(k - 1) = kk / std::sqrt(4.0 * kk * kk - 1.0);
  }
  return golub_welsch(d, e, 2.0);
}

QuadRule make_hermite(int n) {
  Eigen::VectorXd d = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd e(n - 1 > 0 ? n - 1 : 0);
  for (int k = 1; k < n; ++k) e(k - 1) = std::sqrt(0.5 * k);
  return golub_welsch(d, e, std::sqrt(M_PI));
}

std::mutex cache_mutex;

}  // namespace

const QuadRule& gauss_legendre(int n) {
  if (n < 1) throw std::invalid_argument("gauss_legendre: order must be >= 1");
  static std::map<int, QuadRule> cache;
  std::lock_guard<std::mutex> lock(cache_mutex);
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, make_legendre(n)).first;
  return it->second;
}

const QuadRule& gauss_hermite(int n) {
  if (n < 1) throw std::invalid_argument("gauss_hermite: order must be >= 1");
  static std::map<int, QuadRule> cache;
  std::lock_guard<std::mutex> lock(cache_mutex);
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, make_hermite(n)).first;
  return it->second;
}

QuadRule map_to_interval(const QuadRule& rule, double a, double b) {
  QuadRule out;
  double half = 0.5 * (b - a);
  double mid = 0.5 * (a + b);
  out.nodes = (rule.nodes.array() * half + mid).matrix();
  out.weights = rule.weights * half;
  return out;
}

}  // namespace jointhaz

#pragma once

#include <Eigen/Dense>

namespace jointhaz {

struct QuadRule {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;
};

// Gauss-Legendre on [-1, 1]; cached per order.
const QuadRule& gauss_legendre(int n);

// Gauss-Hermite for weight exp(-x^2); cached per order.
const QuadRule& gauss_hermite(int n);

// Nodes/weights of `rule` mapped to [a, b].
QuadRule map_to_interval(const QuadRule& rule, double a, double b);

}  // namespace jointhaz

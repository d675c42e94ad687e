#include "stkd/graph.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>

namespace stkd {

RowMatrix normalized_laplacian(const RowMatrix& weights) {
  const Eigen::Index n = weights.rows();
  Eigen::VectorXd inv_sqrt(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    inv_sqrt(i) = 1.0 / std::sqrt(std::max(weights.row(i).sum(), kDegreeFloor));
  }
  RowMatrix lap = -(inv_sqrt.asDiagonal() * weights * inv_sqrt.asDiagonal());
  lap.diagonal().array() += 1.0;
  return lap;
}

double largest_eigenvalue(const RowMatrix& symmetric) {
  const Eigen::Index n = symmetric.rows();
  if (n == 0) return 0.0;
  if (n <= kExactEigenLimit) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(symmetric, Eigen::EigenvaluesOnly);
    return solver.eigenvalues().maxCoeff();
  }
  // Power iteration on the shifted matrix so the dominant eigenvalue is the largest one.
  const double shift = symmetric.cwiseAbs().rowwise().sum().maxCoeff();
  Eigen::MatrixXd shifted = symmetric;
  shifted.diagonal().array() += shift;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = u(rng);
  v.normalize();
  // Stop on the eigen-residual; the Rayleigh quotient error is then second order.
  double lambda = 0.0;
  for (int it = 0; it < 100000; ++it) {
    const Eigen::VectorXd w = shifted * v;
    lambda = v.dot(w);
    if ((w - lambda * v).norm() <= 1e-7 * shift) break;
    v = w.normalized();
  }
  return lambda - shift;
}

ScaledLaplacian scaled_laplacian(const WeightedAdjacency& adjacency) {
  ScaledLaplacian out;
  const RowMatrix lap = normalized_laplacian(adjacency.weights);
  out.lambda_max = largest_eigenvalue(lap);
  const Eigen::Index n = lap.rows();
  if (out.lambda_max <= 0.0) {
    out.matrix = -RowMatrix::Identity(n, n);
    return out;
  }
  out.matrix = (2.0 / out.lambda_max) * lap;
  out.matrix.diagonal().array() -= 1.0;
  return out;
}

GraphKernel::GraphKernel(const ScaledLaplacian& laplacian, int order) : nodes_(laplacian.nodes()) {
  if (order < 1) throw ShapeError("Chebyshev order must be at least 1");
  const Eigen::Index n = nodes_;
  polys_.push_back(RowMatrix::Identity(n, n));
  if (order > 1) polys_.push_back(laplacian.matrix);
  for (int k = 2; k < order; ++k) {
    polys_.push_back(2.0 * laplacian.matrix * polys_[k - 1] - polys_[k - 2]);
  }
  stacked_.resize(static_cast<Eigen::Index>(order) * n, n);
  for (int k = 0; k < order; ++k) stacked_.middleRows(k * n, n) = polys_[k];
}

}  // namespace stkd

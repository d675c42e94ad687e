#pragma once

#include <vector>

#include "stkd/datahub.hpp"
#include "stkd/tensor.hpp"

namespace stkd {

struct ScaledLaplacian {
  RowMatrix matrix;  // 2 L_sym / lambda_max - I
  double lambda_max = 0.0;

  int nodes() const { return static_cast<int>(matrix.rows()); }
};

inline constexpr double kDegreeFloor = 1e-6;
inline constexpr int kExactEigenLimit = 512;

/// Symmetric normalized Laplacian I - D^-1/2 W D^-1/2 with degrees floored at kDegreeFloor.
RowMatrix normalized_laplacian(const RowMatrix& weights);

/// Largest eigenvalue of a symmetric matrix; exact eigensolve up to kExactEigenLimit nodes,
/// power iteration (tolerance 1e-6) beyond.
double largest_eigenvalue(const RowMatrix& symmetric);

ScaledLaplacian scaled_laplacian(const WeightedAdjacency& adjacency);

/// Chebyshev polynomials T_0..T_{order-1} of the scaled Laplacian.
class GraphKernel {
 public:
  GraphKernel() = default;
  GraphKernel(const ScaledLaplacian& laplacian, int order);

  int nodes() const { return nodes_; }
  int order() const { return static_cast<int>(polys_.size()); }
  const RowMatrix& poly(int k) const { return polys_[static_cast<std::size_t>(k)]; }
  /// [T_0 | T_1 | ... ] stacked vertically, (order*N x N).
  const RowMatrix& stacked() const { return stacked_; }

 private:
  int nodes_ = 0;
  std::vector<RowMatrix> polys_;
  RowMatrix stacked_;
};

}  // namespace stkd

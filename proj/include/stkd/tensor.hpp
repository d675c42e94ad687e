#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace stkd {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixMap = Eigen::Map<RowMatrix>;
using ConstRowMatrixMap = Eigen::Map<const RowMatrix>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense row-major 4-D tensor of doubles.
///
/// Traffic tensors use the (batch, time, node, channel) axis order; the
/// correlation tensors reuse the same container with their own axis meaning.
class Tensor {
 public:
  using Dims = std::array<int, 4>;

  Tensor() = default;
  Tensor(int d0, int d1, int d2, int d3, double fill = 0.0);
  explicit Tensor(Dims dims, double fill = 0.0);

  const Dims& dims() const { return dims_; }
  int dim(int axis) const { return dims_[static_cast<std::size_t>(axis)]; }
  int batch() const { return dims_[0]; }
  int time() const { return dims_[1]; }
  int nodes() const { return dims_[2]; }
  int channels() const { return dims_[3]; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t offset(int i0, int i1, int i2, int i3) const {
    return ((static_cast<std::size_t>(i0) * dims_[1] + i1) * dims_[2] + i2) * dims_[3] + i3;
  }
  double& operator()(int i0, int i1, int i2, int i3) { return data_[offset(i0, i1, i2, i3)]; }
  double operator()(int i0, int i1, int i2, int i3) const { return data_[offset(i0, i1, i2, i3)]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  /// The (d2 x d3) matrix at leading index (i0, i1).
  RowMatrixMap slab(int i0, int i1);
  ConstRowMatrixMap slab(int i0, int i1) const;

  /// Rows [i1_begin, i1_begin + count) of the flattened (d1*d2 x d3) matrix for batch i0.
  RowMatrixMap rows(int i0, int i1_begin, int count);
  ConstRowMatrixMap rows(int i0, int i1_begin, int count) const;

  /// Copy of time steps [begin, begin + count) along axis 1.
  Tensor slice_time(int begin, int count) const;

  void fill(double v);
  Tensor& operator+=(const Tensor& other);
  bool same_dims(const Tensor& other) const { return dims_ == other.dims_; }

  std::string shape_string() const;

 private:
  Dims dims_{0, 0, 0, 0};
  std::vector<double> data_;
};

void require_same_dims(const Tensor& a, const Tensor& b, const char* what);

}  // namespace stkd

#include "stkd/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace stkd {

Tensor::Tensor(int d0, int d1, int d2, int d3, double fill) : Tensor(Dims{d0, d1, d2, d3}, fill) {}

Tensor::Tensor(Dims dims, double fill) : dims_(dims) {
  for (int d : dims_) {
    if (d < 0) throw ShapeError("negative tensor dimension");
  }
  data_.assign(static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2] * dims_[3], fill);
}

RowMatrixMap Tensor::slab(int i0, int i1) {
  return RowMatrixMap(data_.data() + offset(i0, i1, 0, 0), dims_[2], dims_[3]);
}

ConstRowMatrixMap Tensor::slab(int i0, int i1) const {
  return ConstRowMatrixMap(data_.data() + offset(i0, i1, 0, 0), dims_[2], dims_[3]);
}

RowMatrixMap Tensor::rows(int i0, int i1_begin, int count) {
  return RowMatrixMap(data_.data() + offset(i0, i1_begin, 0, 0),
                      static_cast<Eigen::Index>(count) * dims_[2], dims_[3]);
}

ConstRowMatrixMap Tensor::rows(int i0, int i1_begin, int count) const {
  return ConstRowMatrixMap(data_.data() + offset(i0, i1_begin, 0, 0),
                           static_cast<Eigen::Index>(count) * dims_[2], dims_[3]);
}

Tensor Tensor::slice_time(int begin, int count) const {
  if (begin < 0 || count < 0 || begin + count > dims_[1]) {
    throw ShapeError("time slice out of range for tensor " + shape_string());
  }
  Tensor out(dims_[0], count, dims_[2], dims_[3]);
  const std::size_t step = static_cast<std::size_t>(dims_[2]) * dims_[3];
  for (int b = 0; b < dims_[0]; ++b) {
    std::copy_n(data_.data() + offset(b, begin, 0, 0), step * count, out.data_.data() + out.offset(b, 0, 0, 0));
  }
  return out;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& other) {
  require_same_dims(*this, other, "tensor addition");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << '(' << dims_[0] << ',' << dims_[1] << ',' << dims_[2] << ',' << dims_[3] << ')';
  return os.str();
}

void require_same_dims(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_dims(b)) {
    throw ShapeError(std::string(what) + ": shape " + a.shape_string() + " vs " + b.shape_string());
  }
}

}  // namespace stkd

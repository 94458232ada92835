#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "xrseq/error.hpp"

namespace xrseq {

/// Dense row-major float tensor. Value semantics; shape is a plain
/// dimension list. Image data is NHWC.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(numel_of(shape_)), 0.0f);
  }
  Tensor(std::initializer_list<int> shape) : Tensor(std::vector<int>(shape)) {}

  static int64_t numel_of(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
  }

  const std::vector<int>& shape() const { return shape_; }
  int dim(size_t i) const { return shape_.at(i); }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  /// Reinterprets the same elements under a new shape.
  Tensor reshaped(std::vector<int> shape) const {
    if (numel_of(shape) != numel()) raise(ErrorKind::shape_mismatch, "reshape changes element count");
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
  }

  std::string shape_str() const {
    std::string s = "(";
    for (size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape_[i]);
    }
    return s + ")";
  }

 private:
  std::vector<int> shape_;
  std::vector<float> data_;
};

using MatrixMap = Eigen::Map<Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatrixMap =
    Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

inline ConstMatrixMap as_matrix(const Tensor& t, int rows, int cols) {
  return ConstMatrixMap(t.data(), rows, cols);
}
inline MatrixMap as_matrix(Tensor& t, int rows, int cols) {
  return MatrixMap(t.data(), rows, cols);
}

/// C = A[m,k] * B[k,n].
inline Tensor matmul(const Tensor& a, int m, int k, const Tensor& b, int n) {
  Tensor c({m, n});
  as_matrix(c, m, n).noalias() = as_matrix(a, m, k) * as_matrix(b, k, n);
  return c;
}

}  // namespace xrseq

#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "fpemb/common.hpp"

namespace fpemb {

using Matrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;

// Dense row-major double tensor. All network math runs in double so that
// finite-difference gradient checks are meaningful end to end.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.setZero(count(shape_));
  }
  Tensor(std::vector<int> shape, double fill) : shape_(std::move(shape)) {
    data_.setConstant(count(shape_), fill);
  }

  static Tensor scalar(double v) {
    Tensor t({1});
    t.data_[0] = v;
    return t;
  }
  static Tensor from(std::vector<int> shape, const std::vector<double>& vals) {
    Tensor t(std::move(shape));
    FPEMB_CHECK(static_cast<std::int64_t>(vals.size()) == t.size(),
                ErrorKind::kContract, "tensor literal size mismatch");
    for (std::int64_t i = 0; i < t.size(); ++i) t.data_[i] = vals[i];
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::int64_t size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  Eigen::ArrayXd& array() { return data_; }
  const Eigen::ArrayXd& array() const { return data_; }

  double& operator[](std::int64_t i) { return data_[i]; }
  double operator[](std::int64_t i) const { return data_[i]; }

  double& at(int i, int j) { return data_[static_cast<std::int64_t>(i) * dim(1) + j]; }
  double at(int i, int j) const { return data_[static_cast<std::int64_t>(i) * dim(1) + j]; }
  double& at(int i, int j, int k) {
    return data_[(static_cast<std::int64_t>(i) * dim(1) + j) * dim(2) + k];
  }
  double at(int i, int j, int k) const {
    return data_[(static_cast<std::int64_t>(i) * dim(1) + j) * dim(2) + k];
  }
  double& at(int i, int j, int k, int l) {
    return data_[((static_cast<std::int64_t>(i) * dim(1) + j) * dim(2) + k) * dim(3) + l];
  }
  double at(int i, int j, int k, int l) const {
    return data_[((static_cast<std::int64_t>(i) * dim(1) + j) * dim(2) + k) * dim(3) + l];
  }

  // View as a (rows, cols) matrix; total size must match.
  MatrixMap mat(int rows, int cols) {
    return MatrixMap(data_.data(), rows, cols);
  }
  ConstMatrixMap mat(int rows, int cols) const {
    return ConstMatrixMap(data_.data(), rows, cols);
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  std::string shape_str() const {
    std::string s = "(";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape_[i]);
    }
    return s + ")";
  }

  static std::int64_t count(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
  }

 private:
  std::vector<int> shape_;
  Eigen::ArrayXd data_;
};

}  // namespace fpemb

#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace flowids {

std::string shape_str(const std::vector<std::size_t>& shape);

// Dense row-major array of 64-bit floats. The whole numeric stack runs on
// doubles; the architectures involved are small and grad checks want the
// precision.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, std::vector<double> values);

  static Tensor from_rows(const std::vector<std::vector<double>>& rows);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_[axis]; }
  std::size_t numel() const { return data_.size(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i, std::size_t j) {
    return data_[i * shape_[1] + j];
  }
  double at(std::size_t i, std::size_t j) const {
    return data_[i * shape_[1] + j];
  }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  void fill(double v);
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

// a[m,k] * b[k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);
// a[k,m]^T * b[k,n] -> [m,n]
Tensor matmul_transpose_a(const Tensor& a, const Tensor& b);
// a[m,k] * b[n,k]^T -> [m,n]
Tensor matmul_transpose_b(const Tensor& a, const Tensor& b);

}  // namespace flowids

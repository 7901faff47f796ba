#ifndef MCIBI_TENSOR_HPP_
#define MCIBI_TENSOR_HPP_

#include <cassert>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace mcibi {

// Dense row-major tensor of doubles, up to 4 dims.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape)
      : shape_(std::move(shape)), data_(numel_of(shape_), 0.0) {}
  Tensor(std::vector<int> shape, double fill)
      : shape_(std::move(shape)), data_(numel_of(shape_), fill) {}
  Tensor(std::vector<int> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<int>(data_.size()) != numel_of(shape_))
      throw std::invalid_argument("tensor data size does not match shape");
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, double v) { return Tensor(std::move(shape), v); }

  const std::vector<int>& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  int numel() const { return static_cast<int>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](int i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int i) const { return data_[static_cast<size_t>(i)]; }

  double& at(int i, int j) { return data_[static_cast<size_t>(i * dim(1) + j)]; }
  double at(int i, int j) const { return data_[static_cast<size_t>(i * dim(1) + j)]; }
  double& at(int c, int y, int x) {
    return data_[static_cast<size_t>((c * dim(1) + y) * dim(2) + x)];
  }
  double at(int c, int y, int x) const {
    return data_[static_cast<size_t>((c * dim(1) + y) * dim(2) + x)];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const;
  double max_abs() const;

  static int numel_of(const std::vector<int>& shape) {
    int n = 1;
    for (int d : shape) {
      if (d < 0) throw std::invalid_argument("negative tensor dimension");
      n *= d;
    }
    return shape.empty() ? 0 : n;
  }

  static std::string shape_str(const std::vector<int>& shape);

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

}  // namespace mcibi

#endif  // MCIBI_TENSOR_HPP_

#pragma once

#include <cassert>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "dpp/errors.hpp"

namespace dpp {

// Dense row-major multi-dimensional double array. The one value type used for
// images, label maps, feature maps, logits and gradients. Label maps hold
// exact small integers in double storage.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape, double fill = 0.0) : shape_(std::move(shape)) {
    std::size_t n = 1;
    for (int d : shape_) {
      if (d <= 0) throw DimensionError("Tensor: non-positive dimension " + std::to_string(d));
      n *= static_cast<std::size_t>(d);
    }
    data_.assign(n, fill);
  }

  Tensor(std::initializer_list<int> shape, double fill = 0.0)
      : Tensor(std::vector<int>(shape), fill) {}

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  const std::vector<int>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& operator()(int i) { return data_[idx1(i)]; }
  double operator()(int i) const { return data_[idx1(i)]; }
  double& operator()(int i, int j) { return data_[idx2(i, j)]; }
  double operator()(int i, int j) const { return data_[idx2(i, j)]; }
  double& operator()(int i, int j, int k) { return data_[idx3(i, j, k)]; }
  double operator()(int i, int j, int k) const { return data_[idx3(i, j, k)]; }
  double& operator()(int i, int j, int k, int l) { return data_[idx4(i, j, k, l)]; }
  double operator()(int i, int j, int k, int l) const { return data_[idx4(i, j, k, l)]; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

 private:
  std::size_t idx1(int i) const {
    assert(rank() == 1);
    return static_cast<std::size_t>(i);
  }
  std::size_t idx2(int i, int j) const {
    assert(rank() == 2);
    return static_cast<std::size_t>(i) * static_cast<std::size_t>(shape_[1]) +
           static_cast<std::size_t>(j);
  }
  std::size_t idx3(int i, int j, int k) const {
    assert(rank() == 3);
    return (static_cast<std::size_t>(i) * static_cast<std::size_t>(shape_[1]) +
            static_cast<std::size_t>(j)) *
               static_cast<std::size_t>(shape_[2]) +
           static_cast<std::size_t>(k);
  }
  std::size_t idx4(int i, int j, int k, int l) const {
    assert(rank() == 4);
    return ((static_cast<std::size_t>(i) * static_cast<std::size_t>(shape_[1]) +
             static_cast<std::size_t>(j)) *
                static_cast<std::size_t>(shape_[2]) +
            static_cast<std::size_t>(k)) *
               static_cast<std::size_t>(shape_[3]) +
           static_cast<std::size_t>(l);
  }

  std::vector<int> shape_;
  std::vector<double> data_;
};

}  // namespace dpp

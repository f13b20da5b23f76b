#pragma once

#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <vector>

#include "fedn/rng.hpp"

namespace fedn {

// Dense row-major tensor of doubles, rank 1..4. Small and value-semantic;
// every network quantity at desk scale fits comfortably in memory.
class Tensor {
public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
      : shape_(std::move(shape)) {
    if (shape_.empty() || shape_.size() > 4)
      throw std::invalid_argument("Tensor: rank must be 1..4");
    std::size_t n = 1;
    for (std::size_t d : shape_) {
      if (d == 0) throw std::invalid_argument("Tensor: zero dimension");
      n *= d;
    }
    data_.assign(n, fill);
  }

  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<std::size_t> shape, double v) {
    return Tensor(std::move(shape), v);
  }

  static Tensor from(std::vector<std::size_t> shape, std::vector<double> values) {
    Tensor t(std::move(shape));
    if (values.size() != t.numel())
      throw std::invalid_argument("Tensor::from: size mismatch");
    t.data_ = std::move(values);
    return t;
  }

  static Tensor uniform(std::vector<std::size_t> shape, double lo, double hi, Rng& rng) {
    Tensor t(std::move(shape));
    for (double& v : t.data_) v = rng.uniform(lo, hi);
    return t;
  }

  static Tensor randn(std::vector<std::size_t> shape, double stddev, Rng& rng) {
    Tensor t(std::move(shape));
    for (double& v : t.data_) v = rng.normal(0.0, stddev);
    return t;
  }

  bool empty() const { return data_.empty(); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& raw() { return data_; }
  const std::vector<double>& raw() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i) { return data_[i]; }
  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double at(std::size_t i) const { return data_[i]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  Tensor reshaped(std::vector<std::size_t> shape) const {
    Tensor t(std::move(shape));
    if (t.numel() != numel()) throw std::invalid_argument("reshaped: numel mismatch");
    t.data_ = data_;
    return t;
  }

  void fill(double v) { data_.assign(data_.size(), v); }

private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

}  // namespace fedn

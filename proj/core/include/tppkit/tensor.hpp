#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tppkit/error.hpp"

namespace tppkit {

// Dimensions of a dense tensor, rank 1 to 4. Every extent is positive.
class Shape {
 public:
  static constexpr std::size_t kMaxRank = 4;

  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims) {
    if (dims.size() == 0 || dims.size() > kMaxRank)
      throw ShapeError("shape rank must be 1.." + std::to_string(kMaxRank));
    for (std::size_t d : dims) {
      if (d == 0) throw ShapeError("shape extents must be positive");
      dims_[rank_++] = d;
    }
  }

  std::size_t rank() const { return rank_; }
  std::size_t operator[](std::size_t i) const { return dims_[i]; }
  std::size_t numel() const {
    std::size_t n = 1;
    for (std::size_t i = 0; i < rank_; ++i) n *= dims_[i];
    return rank_ == 0 ? 0 : n;
  }

  bool operator==(const Shape& other) const {
    if (rank_ != other.rank_) return false;
    for (std::size_t i = 0; i < rank_; ++i)
      if (dims_[i] != other.dims_[i]) return false;
    return true;
  }

  std::string to_string() const {
    std::string out = "(";
    for (std::size_t i = 0; i < rank_; ++i) {
      if (i) out += "x";
      out += std::to_string(dims_[i]);
    }
    return out + ")";
  }

 private:
  std::array<std::size_t, kMaxRank> dims_{};
  std::size_t rank_ = 0;
};

// Dense row-major tensor of doubles.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(shape), data_(shape.numel(), 0.0) {}

  Tensor(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.numel())
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_.to_string());
  }

  static Tensor scalar(double value) { return Tensor(Shape{1}, {value}); }

  static Tensor vector(std::vector<double> values) {
    const std::size_t n = values.size();
    if (n == 0) throw ShapeError("empty vector");
    return Tensor(Shape{n}, std::move(values));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor(Shape{rows, cols}, std::move(values));
  }

  static Tensor zeros(Shape shape) { return Tensor(shape); }

  static Tensor filled(Shape shape, double value) {
    Tensor t(shape);
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  bool is_scalar() const { return data_.size() == 1; }

  std::size_t rows() const { return shape_[0]; }
  std::size_t cols() const { return shape_.rank() > 1 ? shape_[1] : 1; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  double item() const {
    if (!is_scalar()) throw ShapeError("item() on non-scalar " + shape_.to_string());
    return data_[0];
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  void fill(double value) { std::fill(data_.begin(), data_.end(), value); }

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

}  // namespace tppkit

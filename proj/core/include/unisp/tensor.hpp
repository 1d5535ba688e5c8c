#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace unisp {

/// Row-major matrix shape. Vectors are 1 x n rows; scalars are 1 x 1.
struct Shape {
  std::size_t rows = 1;
  std::size_t cols = 1;

  std::size_t size() const noexcept { return rows * cols; }
  bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& shape);

/// Dense double-precision tensor with an optional gradient buffer of the same shape.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor row(std::vector<double> values);
  static Tensor scalar(double value) { return Tensor({1, 1}, value); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return values_.size(); }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  double& operator()(std::size_t r, std::size_t c) { return values_[r * shape_.cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * shape_.cols + c]; }

  bool has_grad() const noexcept { return !grad_.empty(); }
  /// Allocates a zeroed gradient buffer if none is present.
  std::span<double> grad();
  std::span<const double> grad() const noexcept { return grad_; }
  void zero_grad();
  void drop_grad() { grad_.clear(); }

 private:
  Shape shape_;
  std::vector<double> values_;
  std::vector<double> grad_;
};

}  // namespace unisp

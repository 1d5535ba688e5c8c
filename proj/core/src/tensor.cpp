#include "unisp/tensor.hpp"

#include <algorithm>

#include "unisp/error.hpp"

namespace unisp {

std::string to_string(const Shape& shape) {
  return "[" + std::to_string(shape.rows) + "x" + std::to_string(shape.cols) + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape), values_(shape.size(), fill) {
  if (shape.rows == 0 || shape.cols == 0) {
    throw ContractViolation("tensor dimensions must be positive, got " + to_string(shape));
  }
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(shape), values_(std::move(values)) {
  if (shape.rows == 0 || shape.cols == 0) {
    throw ContractViolation("tensor dimensions must be positive, got " + to_string(shape));
  }
  if (values_.size() != shape.size()) {
    throw ContractViolation("tensor of shape " + to_string(shape) + " given " +
                            std::to_string(values_.size()) + " values");
  }
}

Tensor Tensor::row(std::vector<double> values) {
  const Shape shape{1, values.size()};
  return Tensor(shape, std::move(values));
}

std::span<double> Tensor::grad() {
  if (grad_.size() != values_.size()) grad_.assign(values_.size(), 0.0);
  return grad_;
}

void Tensor::zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }

}  // namespace unisp

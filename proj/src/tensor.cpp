#include "xpl/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>

namespace xpl {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

void require_finite(std::span<const double> values, const char* what) {
  // v * 0 is NaN exactly when v is infinite or NaN; the sum stays vectorizable.
  double probe = 0.0;
  for (double v : values) probe += v * 0.0;
  if (probe != 0.0) throw std::domain_error(std::string(what) + ": non-finite value");
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_.empty()) throw std::invalid_argument("tensor: empty shape");
  for (auto d : shape_) {
    if (d == 0) throw std::invalid_argument("tensor: zero-sized dimension in " + shape_str(shape_));
  }
  if (values_.size() != shape_size(shape_)) {
    throw std::invalid_argument("tensor: " + std::to_string(values_.size()) +
                                " values for shape " + shape_str(shape_));
  }
  require_finite(values_, "tensor");
}

Tensor Tensor::zeros(Shape shape) { return filled(std::move(shape), 0.0); }

Tensor Tensor::filled(Shape shape, double value) {
  auto n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::vector(std::vector<double> values) {
  auto n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

double Tensor::item() const {
  if (values_.size() != 1) {
    throw std::invalid_argument("tensor: item() on shape " + shape_str(shape_));
  }
  return values_[0];
}

}  // namespace xpl

#include "cicr/numerics/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace cicr::num {

std::string shape_str(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace {

void validate_shape(const Shape& shape) {
  if (shape.size() > 3) throw DimensionError("tensor rank > 3: " + shape_str(shape));
  for (auto d : shape)
    if (d == 0) throw DimensionError("zero-length dimension in " + shape_str(shape));
}

}  // namespace

Tensor::Tensor() : s_(std::make_shared<Storage>()) { s_->values.assign(1, 0.0); }

Tensor::Tensor(Shape shape, double fill) : s_(std::make_shared<Storage>()) {
  validate_shape(shape);
  s_->values.assign(shape_size(shape), fill);
  s_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : s_(std::make_shared<Storage>()) {
  validate_shape(shape);
  if (values.size() != shape_size(shape))
    throw DimensionError("value count " + std::to_string(values.size()) + " does not match shape " +
                         shape_str(shape));
  s_->shape = std::move(shape);
  s_->values = std::move(values);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor(Shape{n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor(Shape{rows, cols}, std::move(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  return s_->shape[axis];
}

std::size_t Tensor::rows() const {
  if (rank() == 2) return s_->shape[0];
  if (rank() <= 1) return 1;
  throw DimensionError("rows() needs rank <= 2, got " + shape_str(shape()));
}

std::size_t Tensor::cols() const {
  if (rank() == 2) return s_->shape[1];
  if (rank() == 1) return s_->shape[0];
  if (rank() == 0) return 1;
  throw DimensionError("cols() needs rank <= 2, got " + shape_str(shape()));
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return s_->values[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  s_->requires_grad = on;
  return *this;
}

std::span<double> Tensor::grad_mut() const {
  if (s_->grad.empty()) s_->grad.assign(s_->values.size(), 0.0);
  return s_->grad;
}

void Tensor::zero_grad() const {
  if (!s_->grad.empty()) std::fill(s_->grad.begin(), s_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return Tensor(s_->shape, s_->values); }

Tensor Tensor::clone() const {
  Tensor t(s_->shape, s_->values);
  t.s_->grad = s_->grad;
  t.s_->requires_grad = s_->requires_grad;
  return t;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != size())
    throw DimensionError("cannot reshape " + shape_str(this->shape()) + " to " + shape_str(shape));
  return Tensor(std::move(shape), s_->values);
}

bool Tensor::all_finite() const {
  auto finite = [](double v) { return std::isfinite(v); };
  return std::all_of(s_->values.begin(), s_->values.end(), finite) &&
         std::all_of(s_->grad.begin(), s_->grad.end(), finite);
}

}  // namespace cicr::num

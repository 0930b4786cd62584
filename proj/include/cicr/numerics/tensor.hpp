#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cicr::num {

using Shape = std::vector<std::size_t>;

/// Raised when operand shapes are incompatible. The message names both shapes.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a caller breaks an API precondition (non-scalar backward, missing gradient, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

std::string shape_str(const Shape& shape);
std::size_t shape_size(const Shape& shape);

// Dense 64-bit array with an optional gradient slot.
//
// Tensor is a handle: copies share storage, which is what lets the tape write
// gradients back into the parameters a model holds. Use clone() for a deep copy
// and detach() for a deep copy that is cut off from gradient tracking.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  const Shape& shape() const { return s_->shape; }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t size() const { return s_->values.size(); }
  std::size_t dim(std::size_t axis) const;
  // Row/column view used by the rank-2 operations. Rank 1 is treated as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const { return s_->values; }
  std::span<double> values_mut() { return s_->values; }
  double item() const;
  double operator[](std::size_t i) const { return s_->values[i]; }
  double at(std::size_t r, std::size_t c) const { return s_->values[r * cols() + c]; }

  bool requires_grad() const { return s_->requires_grad; }
  Tensor& set_requires_grad(bool on);

  bool has_grad() const { return !s_->grad.empty(); }
  std::span<const double> grad() const { return s_->grad; }
  // Allocates a zero gradient on first use.
  std::span<double> grad_mut() const;
  void zero_grad() const;
  void clear_grad() const { s_->grad.clear(); }

  Tensor detach() const;
  Tensor clone() const;
  Tensor reshaped(Shape shape) const;  // deep copy with a new shape, same element count

  bool same_storage(const Tensor& other) const { return s_ == other.s_; }
  bool all_finite() const;

 private:
  struct Storage {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Storage> s_;
};

}  // namespace cicr::num

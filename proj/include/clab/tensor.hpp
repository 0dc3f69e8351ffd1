#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace clab {

using Shape = std::vector<std::size_t>;

/// Thrown when operand shapes are incompatible with an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a computation produces NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major float64 array with an optional gradient buffer.
///
/// A tensor owns its storage. The gradient buffer exists iff requires_grad()
/// is set and always has the same number of elements as the values.
class Tensor {
 public:
  Tensor() : shape_{1}, values_(1, 0.0) {}

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), values_(checked_size(shape_), fill) {}

  Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
    if (checked_size(shape_) != values_.size()) {
      throw ShapeError("tensor: shape " + shape_str(shape_) + " does not match " +
                       std::to_string(values_.size()) + " values");
    }
  }

  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> v) {
    return Tensor({rows, cols}, std::vector<double>(v));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rows() const { return shape_.at(0); }
  std::size_t cols() const { return rank() > 1 ? shape_.at(1) : 1; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::vector<double>& buffer() { return values_; }
  const std::vector<double>& buffer() const { return values_; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }

  double item() const {
    if (values_.size() != 1) throw ShapeError("item(): tensor is not a scalar " + shape_str(shape_));
    return values_[0];
  }

  bool requires_grad() const { return requires_grad_; }

  Tensor& set_requires_grad(bool on = true) {
    requires_grad_ = on;
    if (on) {
      grad_.assign(values_.size(), 0.0);
    } else {
      grad_.clear();
    }
    return *this;
  }

  std::span<double> grad() { return grad_; }
  std::span<const double> grad() const { return grad_; }

  void zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }

  /// Reinterprets the buffer under a new shape of equal size.
  Tensor reshaped(Shape shape) const {
    Tensor out(std::move(shape), values_);
    return out;
  }

  bool all_finite() const {
    for (double v : values_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

 private:
  static std::size_t checked_size(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor: empty shape");
    for (auto d : shape) {
      if (d == 0) throw ShapeError("tensor: zero-length dimension in " + shape_str(shape));
    }
    return shape_size(shape);
  }

  Shape shape_;
  std::vector<double> values_;
  bool requires_grad_ = false;
  std::vector<double> grad_;
};

}  // namespace clab

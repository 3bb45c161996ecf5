#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace protoaudit {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace numerics {

using protoaudit::ShapeError;

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, std::size_t b) { return a * b; });
}

std::string shape_to_string(const Shape& shape);

/// Dense row-major n-dimensional array. `Scalar` is float for all published
/// model paths; double instantiations exist for verification code.
template <typename Scalar>
class BasicTensor {
 public:
  using value_type = Scalar;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, Scalar fill = Scalar{0})
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
    check_dims();
  }

  BasicTensor(Shape shape, std::vector<Scalar> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_dims();
    if (data_.size() != shape_numel(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_to_string(shape_));
    }
  }

  static BasicTensor zeros_like(const BasicTensor& other) {
    return BasicTensor(other.shape_);
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<Scalar> data() noexcept { return data_; }
  std::span<const Scalar> data() const noexcept { return data_; }
  Scalar* raw() noexcept { return data_.data(); }
  const Scalar* raw() const noexcept { return data_.data(); }
  const std::vector<Scalar>& values() const noexcept { return data_; }

  Scalar& operator[](std::size_t i) noexcept { return data_[i]; }
  const Scalar& operator[](std::size_t i) const noexcept { return data_[i]; }

  Scalar& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const Scalar& at(std::size_t i, std::size_t j) const {
    return data_[i * shape_[1] + j];
  }
  Scalar& at(std::size_t c, std::size_t h, std::size_t w) {
    return data_[(c * shape_[1] + h) * shape_[2] + w];
  }
  const Scalar& at(std::size_t c, std::size_t h, std::size_t w) const {
    return data_[(c * shape_[1] + h) * shape_[2] + w];
  }

  void fill(Scalar v) { std::fill(data_.begin(), data_.end(), v); }

  /// Same data, new shape with identical element count.
  BasicTensor reshaped(Shape shape) const {
    return BasicTensor(std::move(shape), data_);
  }

  bool all_finite() const {
    for (Scalar v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  template <typename Other>
  BasicTensor<Other> cast() const {
    std::vector<Other> out(data_.begin(), data_.end());
    return BasicTensor<Other>(shape_, std::move(out));
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_dims() const {
    for (std::size_t d : shape_) {
      if (d == 0) throw ShapeError("tensor dimensions must be positive");
    }
  }

  Shape shape_;
  std::vector<Scalar> data_;
};

using Tensor = BasicTensor<float>;

/// Sum in double precision regardless of element type.
template <typename Scalar>
double sum(const BasicTensor<Scalar>& t) {
  double acc = 0.0;
  for (Scalar v : t.data()) acc += static_cast<double>(v);
  return acc;
}

}  // namespace numerics
}  // namespace protoaudit

#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "voxnas/error.hpp"

namespace voxnas {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1},
                         [](Index a, Index b) { return a * b; });
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

// Dense row-major n-way array. Element storage is an Eigen column array so
// whole-tensor arithmetic goes through Eigen expressions.
template <typename Scalar>
class BasicTensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, Scalar fill = Scalar(0))
      : shape_(std::move(shape)), data_(Array::Constant(shape_size(shape_), fill)) {}
  BasicTensor(Shape shape, Array data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_)) {
      throw ShapeMismatch("data length " + std::to_string(data_.size()) +
                          " does not match shape " + shape_string(shape_));
    }
  }

  static BasicTensor zeros_like(const BasicTensor& other) {
    return BasicTensor(other.shape_, Scalar(0));
  }

  const Shape& shape() const { return shape_; }
  Index dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rank() const { return shape_.size(); }
  Index size() const { return data_.size(); }

  Array& array() { return data_; }
  const Array& array() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Scalar& operator[](Index i) { return data_[i]; }
  const Scalar& operator[](Index i) const { return data_[i]; }

  template <typename... Ix>
  Scalar& operator()(Ix... ix) { return data_[offset({static_cast<Index>(ix)...})]; }
  template <typename... Ix>
  const Scalar& operator()(Ix... ix) const { return data_[offset({static_cast<Index>(ix)...})]; }

  Index offset(std::initializer_list<Index> ix) const {
    Index off = 0;
    std::size_t a = 0;
    for (Index i : ix) off = off * shape_[a++] + i;
    return off;
  }

  BasicTensor reshaped(Shape shape) const { return BasicTensor(std::move(shape), data_); }

  bool all_finite() const { return data_.isFinite().all(); }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && (a.data_ == b.data_).all();
  }

 private:
  Shape shape_;
  Array data_;
};

using Tensor = BasicTensor<double>;

}  // namespace voxnas

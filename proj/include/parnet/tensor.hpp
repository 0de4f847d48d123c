#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "parnet/error.hpp"

namespace parnet {

using Shape = std::vector<int>;

std::string shape_string(const Shape& shape);

/// Inclusive axis-aligned pixel rectangle.
struct BoundingBox {
  int row0 = 0;
  int col0 = 0;
  int row1 = 0;
  int col1 = 0;

  int height() const { return row1 - row0 + 1; }
  int width() const { return col1 - col0 + 1; }
  long area() const { return static_cast<long>(height()) * width(); }
  bool contains(int r, int c) const { return r >= row0 && r <= row1 && c >= col0 && c <= col1; }
  bool valid() const { return row1 >= row0 && col1 >= col0; }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

std::string to_string(const BoundingBox& box);

/// Intersection over union of two pixel rectangles (0 when disjoint).
double iou(const BoundingBox& a, const BoundingBox& b);

/// Dense row-major array. Rank 1-4 in practice; CHW for images and feature
/// maps. A default-constructed tensor is empty (rank 0, no data) and only
/// serves as a placeholder.
template <typename Scalar>
class Tensor {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<RowMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix>;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(checked(std::move(shape))), data_(Vector::Zero(count(shape_))) {}

  Tensor(Shape shape, Vector data) : shape_(checked(std::move(shape))), data_(std::move(data)) {
    if (data_.size() != count(shape_)) {
      throw ShapeError("tensor: shape " + shape_string(shape_) + " holds " + std::to_string(count(shape_)) +
                       " values, got " + std::to_string(data_.size()));
    }
  }

  Tensor(Shape shape, std::initializer_list<Scalar> values)
      : Tensor(std::move(shape), Eigen::Map<const Vector>(values.begin(), static_cast<Eigen::Index>(values.size()))) {}

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, Scalar value) {
    Tensor t(std::move(shape));
    t.data_.setConstant(value);
    return t;
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int extent(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Eigen::Index size() const { return data_.size(); }
  bool empty() const { return shape_.empty(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> values() { return {data_.data(), static_cast<std::size_t>(data_.size())}; }
  std::span<const Scalar> values() const { return {data_.data(), static_cast<std::size_t>(data_.size())}; }

  Vector& vec() { return data_; }
  const Vector& vec() const { return data_; }

  /// Row-major view as [extent(0), size / extent(0)].
  MatrixMap as_matrix() { return MatrixMap(data_.data(), shape_.at(0), data_.size() / shape_.at(0)); }
  ConstMatrixMap as_matrix() const {
    return ConstMatrixMap(data_.data(), shape_.at(0), data_.size() / shape_.at(0));
  }

  template <typename... Idx>
  Scalar& operator()(Idx... idx) {
    return data_[offset(idx...)];
  }
  template <typename... Idx>
  const Scalar& operator()(Idx... idx) const {
    return data_[offset(idx...)];
  }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  static Shape checked(Shape shape) {
    for (int e : shape) {
      if (e < 1) throw ShapeError("tensor: extents must be >= 1, got " + shape_string(shape));
    }
    return shape;
  }

  static Eigen::Index count(const Shape& shape) {
    Eigen::Index n = 1;
    for (int e : shape) n *= e;
    return shape.empty() ? 0 : n;
  }

  template <typename... Idx>
  Eigen::Index offset(Idx... idx) const {
    const int index[] = {static_cast<int>(idx)...};
    eigen_assert(sizeof...(Idx) == shape_.size());
    Eigen::Index linear = 0;
    for (std::size_t axis = 0; axis < sizeof...(Idx); ++axis) {
      eigen_assert(index[axis] >= 0 && index[axis] < shape_[axis]);
      linear = linear * shape_[axis] + index[axis];
    }
    return linear;
  }

  Shape shape_;
  Vector data_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

namespace detail {

template <typename Scalar>
void require_same_shape(const char* op, const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

}  // namespace detail

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape("add", a, b);
  return Tensor<Scalar>(a.shape(), a.vec() + b.vec());
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape("mul", a, b);
  return Tensor<Scalar>(a.shape(), a.vec().cwiseProduct(b.vec()));
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar factor) {
  return Tensor<Scalar>(a.shape(), a.vec() * factor);
}

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  Tensor<Scalar> out({a.extent(0), b.extent(1)});
  out.as_matrix().noalias() = a.as_matrix() * b.as_matrix();
  return out;
}

template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& t) {
  if (t.empty()) return {};
  return Tensor<To>(t.shape(), t.vec().template cast<To>());
}

/// Copies the spatial window `box` out of a CHW tensor, keeping all channels.
template <typename Scalar>
Tensor<Scalar> slice_region(const Tensor<Scalar>& image, const BoundingBox& box) {
  if (image.rank() != 3) throw ShapeError("slice_region: expected CHW tensor, got " + shape_string(image.shape()));
  const int height = image.extent(1);
  const int width = image.extent(2);
  if (!box.valid() || box.row0 < 0 || box.col0 < 0 || box.row1 >= height || box.col1 >= width) {
    throw ShapeError("slice_region: box " + to_string(box) + " outside " + shape_string(image.shape()));
  }
  Tensor<Scalar> out({image.extent(0), box.height(), box.width()});
  for (int c = 0; c < image.extent(0); ++c) {
    for (int r = 0; r < box.height(); ++r) {
      for (int col = 0; col < box.width(); ++col) out(c, r, col) = image(c, box.row0 + r, box.col0 + col);
    }
  }
  return out;
}

/// Returns a copy of `image` with `patch` written at (row0, col0).
template <typename Scalar>
Tensor<Scalar> embed_region(const Tensor<Scalar>& image, const Tensor<Scalar>& patch, int row0, int col0) {
  if (image.rank() != 3 || patch.rank() != 3 || patch.extent(0) != image.extent(0) || row0 < 0 || col0 < 0 ||
      row0 + patch.extent(1) > image.extent(1) || col0 + patch.extent(2) > image.extent(2)) {
    throw ShapeError("embed_region: patch " + shape_string(patch.shape()) + " does not fit " +
                     shape_string(image.shape()) + " at (" + std::to_string(row0) + "," + std::to_string(col0) + ")");
  }
  Tensor<Scalar> out = image;
  for (int c = 0; c < patch.extent(0); ++c) {
    for (int r = 0; r < patch.extent(1); ++r) {
      for (int col = 0; col < patch.extent(2); ++col) out(c, row0 + r, col0 + col) = patch(c, r, col);
    }
  }
  return out;
}

}  // namespace parnet

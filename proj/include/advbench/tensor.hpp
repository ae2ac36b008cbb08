#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "advbench/error.hpp"

namespace advbench {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

// Product of extents; throws kInvalidArgument on rank 0 or a zero extent.
std::size_t checked_numel(const Shape& shape);

// Dense row-major array. Values are validated finite on every public
// constructor; arithmetic helpers below return fresh tensors.
template <typename Scalar>
class BasicTensor {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix =
      Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<RowMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix>;

  BasicTensor() : shape_{1}, data_(Vector::Zero(1)) {}

  explicit BasicTensor(Shape shape, Scalar fill = Scalar(0))
      : shape_(std::move(shape)) {
    data_ = Vector::Constant(static_cast<Eigen::Index>(checked_numel(shape_)), fill);
    require_finite();
  }

  BasicTensor(Shape shape, std::span<const Scalar> values)
      : shape_(std::move(shape)) {
    const std::size_t n = checked_numel(shape_);
    if (values.size() != n) {
      throw Error(ErrorCode::kShapeMismatch,
                  "tensor data length " + std::to_string(values.size()) +
                      " does not match shape " + shape_string(shape_));
    }
    data_ = Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(n));
    require_finite();
  }

  BasicTensor(Shape shape, std::initializer_list<Scalar> values)
      : BasicTensor(std::move(shape), std::span<const Scalar>(values.begin(), values.size())) {}

  BasicTensor(Shape shape, Vector values) : shape_(std::move(shape)), data_(std::move(values)) {
    if (static_cast<std::size_t>(data_.size()) != checked_numel(shape_)) {
      throw Error(ErrorCode::kShapeMismatch,
                  "tensor data length " + std::to_string(data_.size()) +
                      " does not match shape " + shape_string(shape_));
    }
    require_finite();
  }

  // Skips the finiteness scan. For kernels that produce values from
  // already-validated tensors.
  static BasicTensor adopt(Shape shape, Vector values) {
    BasicTensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(values);
    return t;
  }

  static BasicTensor zeros(Shape shape) {
    const auto n = static_cast<Eigen::Index>(checked_numel(shape));
    return adopt(std::move(shape), Vector::Zero(n));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return static_cast<std::size_t>(data_.size()); }

  const Vector& vec() const noexcept { return data_; }
  Vector& vec() noexcept { return data_; }

  Scalar* data() noexcept { return data_.data(); }
  const Scalar* data() const noexcept { return data_.data(); }
  std::span<const Scalar> values() const noexcept { return {data_.data(), size()}; }
  std::span<Scalar> values() noexcept { return {data_.data(), size()}; }

  Scalar operator[](std::size_t i) const { return data_[static_cast<Eigen::Index>(i)]; }
  Scalar& operator[](std::size_t i) { return data_[static_cast<Eigen::Index>(i)]; }

  // View of the data as rows x cols, row-major. rows * cols must equal size().
  MatrixMap matrix(std::size_t rows, std::size_t cols) {
    return MatrixMap(data_.data(), static_cast<Eigen::Index>(rows),
                     static_cast<Eigen::Index>(cols));
  }
  ConstMatrixMap matrix(std::size_t rows, std::size_t cols) const {
    return ConstMatrixMap(data_.data(), static_cast<Eigen::Index>(rows),
                          static_cast<Eigen::Index>(cols));
  }

  BasicTensor reshaped(Shape shape) const {
    if (checked_numel(shape) != size()) {
      throw Error(ErrorCode::kShapeMismatch,
                  "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    return adopt(std::move(shape), data_);
  }

  bool all_finite() const { return data_.allFinite(); }

  template <typename Other>
  BasicTensor<Other> cast() const {
    return BasicTensor<Other>::adopt(shape_, data_.template cast<Other>());
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void require_finite() const {
    if (!data_.allFinite()) {
      throw Error(ErrorCode::kNonFinite,
                  "tensor of shape " + shape_string(shape_) + " contains NaN or Inf");
    }
  }

  Shape shape_;
  Vector data_;
};

using Tensor = BasicTensor<float>;

template <typename Scalar>
void require_same_shape(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b,
                        const char* what) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorCode::kShapeMismatch, std::string(what) + ": shape " +
                                               shape_string(a.shape()) + " vs " +
                                               shape_string(b.shape()));
  }
}

// sign with sign(0) == 0.
template <typename Scalar>
Scalar sign_of(Scalar v) {
  return static_cast<Scalar>((Scalar(0) < v) - (v < Scalar(0)));
}

template <typename Scalar>
BasicTensor<Scalar> add(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  require_same_shape(a, b, "add");
  return BasicTensor<Scalar>(a.shape(), typename BasicTensor<Scalar>::Vector(a.vec() + b.vec()));
}

template <typename Scalar>
BasicTensor<Scalar> sub(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  require_same_shape(a, b, "sub");
  return BasicTensor<Scalar>(a.shape(), typename BasicTensor<Scalar>::Vector(a.vec() - b.vec()));
}

template <typename Scalar>
BasicTensor<Scalar> mul(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  require_same_shape(a, b, "mul");
  return BasicTensor<Scalar>(
      a.shape(), typename BasicTensor<Scalar>::Vector(a.vec().cwiseProduct(b.vec())));
}

template <typename Scalar>
BasicTensor<Scalar> scale(const BasicTensor<Scalar>& a, Scalar s) {
  return BasicTensor<Scalar>(a.shape(), typename BasicTensor<Scalar>::Vector(a.vec() * s));
}

template <typename Scalar>
BasicTensor<Scalar> add_scalar(const BasicTensor<Scalar>& a, Scalar s) {
  return BasicTensor<Scalar>(
      a.shape(), typename BasicTensor<Scalar>::Vector(a.vec().array() + s));
}

template <typename Scalar>
BasicTensor<Scalar> sign(const BasicTensor<Scalar>& a) {
  return BasicTensor<Scalar>::adopt(
      a.shape(), a.vec().unaryExpr([](Scalar v) { return sign_of(v); }));
}

template <typename Scalar>
BasicTensor<Scalar> abs(const BasicTensor<Scalar>& a) {
  return BasicTensor<Scalar>::adopt(a.shape(), a.vec().cwiseAbs());
}

template <typename Scalar>
BasicTensor<Scalar> clamp(const BasicTensor<Scalar>& a, Scalar lo, Scalar hi) {
  if (!(lo <= hi)) {
    throw Error(ErrorCode::kInvalidArgument, "clamp: lo must not exceed hi");
  }
  return BasicTensor<Scalar>::adopt(a.shape(), a.vec().cwiseMax(lo).cwiseMin(hi));
}

// Entrywise clamp into [lo_t, hi_t] given as tensors of a's shape.
template <typename Scalar>
BasicTensor<Scalar> clamp(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& lo,
                          const BasicTensor<Scalar>& hi) {
  require_same_shape(a, lo, "clamp");
  require_same_shape(a, hi, "clamp");
  return BasicTensor<Scalar>::adopt(a.shape(), a.vec().cwiseMax(lo.vec()).cwiseMin(hi.vec()));
}

enum class ElementwiseOp { kAdd, kSub, kMul, kScale, kSign, kClamp, kAbs };

template <typename Scalar>
struct ClampBounds {
  Scalar lo;
  Scalar hi;
};

template <typename Scalar>
using ElementwiseOperand =
    std::variant<std::monostate, BasicTensor<Scalar>, Scalar, ClampBounds<Scalar>>;

// Single entry point over the named helpers. Binary ops accept a tensor
// (add/sub/mul) or a scalar (add/sub/scale).
template <typename Scalar>
BasicTensor<Scalar> elementwise(ElementwiseOp op, const BasicTensor<Scalar>& a,
                                const ElementwiseOperand<Scalar>& b = {}) {
  auto tensor_arg = [&]() -> const BasicTensor<Scalar>* {
    return std::get_if<BasicTensor<Scalar>>(&b);
  };
  auto scalar_arg = [&]() -> const Scalar* { return std::get_if<Scalar>(&b); };
  switch (op) {
    case ElementwiseOp::kAdd:
      if (auto* t = tensor_arg()) return add(a, *t);
      if (auto* s = scalar_arg()) return add_scalar(a, *s);
      break;
    case ElementwiseOp::kSub:
      if (auto* t = tensor_arg()) return sub(a, *t);
      if (auto* s = scalar_arg()) return add_scalar(a, -*s);
      break;
    case ElementwiseOp::kMul:
      if (auto* t = tensor_arg()) return mul(a, *t);
      if (auto* s = scalar_arg()) return scale(a, *s);
      break;
    case ElementwiseOp::kScale:
      if (auto* s = scalar_arg()) return scale(a, *s);
      break;
    case ElementwiseOp::kSign:
      return sign(a);
    case ElementwiseOp::kAbs:
      return abs(a);
    case ElementwiseOp::kClamp:
      if (auto* c = std::get_if<ClampBounds<Scalar>>(&b)) return clamp(a, c->lo, c->hi);
      break;
  }
  throw Error(ErrorCode::kInvalidArgument, "elementwise: operand kind does not fit op");
}

template <typename Scalar>
Scalar linf_distance(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  require_same_shape(a, b, "linf_distance");
  return (a.vec() - b.vec()).cwiseAbs().maxCoeff();
}

template <typename Scalar>
Scalar l2_norm(const BasicTensor<Scalar>& a) {
  return a.vec().norm();
}

// Contiguous slice [begin, begin + count) along axis 0.
template <typename Scalar>
BasicTensor<Scalar> slice_rows(const BasicTensor<Scalar>& a, std::size_t begin, std::size_t count) {
  if (begin + count > a.dim(0) || count == 0) {
    throw Error(ErrorCode::kInvalidArgument, "slice_rows out of range for shape " +
                                                 shape_string(a.shape()));
  }
  const std::size_t stride = a.size() / a.dim(0);
  Shape shape = a.shape();
  shape[0] = count;
  return BasicTensor<Scalar>::adopt(
      std::move(shape), a.vec().segment(static_cast<Eigen::Index>(begin * stride),
                                        static_cast<Eigen::Index>(count * stride)));
}

// Stacks equally shaped tensors along a new leading axis.
template <typename Scalar>
BasicTensor<Scalar> stack(std::span<const BasicTensor<Scalar>> items) {
  if (items.empty()) throw Error(ErrorCode::kInvalidArgument, "stack of zero tensors");
  Shape shape{items.size()};
  shape.insert(shape.end(), items[0].shape().begin(), items[0].shape().end());
  typename BasicTensor<Scalar>::Vector data(static_cast<Eigen::Index>(checked_numel(shape)));
  const auto stride = static_cast<Eigen::Index>(items[0].size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    require_same_shape(items[0], items[i], "stack");
    data.segment(static_cast<Eigen::Index>(i) * stride, stride) = items[i].vec();
  }
  return BasicTensor<Scalar>::adopt(std::move(shape), std::move(data));
}

}  // namespace advbench

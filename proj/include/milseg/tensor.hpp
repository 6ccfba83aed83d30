#ifndef MILSEG_TENSOR_HPP
#define MILSEG_TENSOR_HPP

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace milseg {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

/// Raised when tensor shapes do not agree with what an operation requires.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

inline Index shape_volume(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Dense row-major array of arbitrary rank backed by an Eigen vector.
///
/// Rank-3 tensors are read as channels x height x width. Matrix views over
/// the storage are exposed through `matrix()` so that layer kernels can be
/// written as Eigen expressions.
template <typename Scalar_>
class Tensor {
 public:
  using Scalar = Scalar_;

  Tensor() = default;

  explicit Tensor(Shape shape, Scalar fill = Scalar(0)) : shape_(std::move(shape)) {
    for (Index d : shape_) {
      if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape_));
    }
    values_.setConstant(shape_volume(shape_), fill);
  }

  Tensor(Shape shape, std::initializer_list<Scalar> values) : Tensor(std::move(shape)) {
    if (static_cast<Index>(values.size()) != size()) {
      throw ShapeError("initializer has " + std::to_string(values.size()) + " values for shape " +
                       shape_string(shape_));
    }
    std::copy(values.begin(), values.end(), values_.data());
  }

  Tensor(Shape shape, Vector<Scalar> values) : shape_(std::move(shape)), values_(std::move(values)) {
    if (shape_volume(shape_) != values_.size()) {
      throw ShapeError("value count " + std::to_string(values_.size()) + " does not match shape " +
                       shape_string(shape_));
    }
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index i) const { return shape_[static_cast<std::size_t>(i)]; }
  Index size() const { return values_.size(); }
  bool empty() const { return values_.size() == 0; }

  Vector<Scalar>& values() { return values_; }
  const Vector<Scalar>& values() const { return values_; }
  Scalar* data() { return values_.data(); }
  const Scalar* data() const { return values_.data(); }

  Scalar& operator[](Index i) { return values_[i]; }
  const Scalar& operator[](Index i) const { return values_[i]; }

  Scalar& operator()(Index c, Index y, Index x) { return values_[(c * shape_[1] + y) * shape_[2] + x]; }
  const Scalar& operator()(Index c, Index y, Index x) const {
    return values_[(c * shape_[1] + y) * shape_[2] + x];
  }

  Eigen::Map<RowMatrix<Scalar>> matrix(Index rows, Index cols) {
    check_matrix(rows, cols);
    return {values_.data(), rows, cols};
  }
  Eigen::Map<const RowMatrix<Scalar>> matrix(Index rows, Index cols) const {
    check_matrix(rows, cols);
    return {values_.data(), rows, cols};
  }

  /// Channel `c` of a rank-3 tensor as a height x width matrix view.
  Eigen::Map<RowMatrix<Scalar>> plane(Index c) {
    return {values_.data() + c * shape_[1] * shape_[2], shape_[1], shape_[2]};
  }
  Eigen::Map<const RowMatrix<Scalar>> plane(Index c) const {
    return {values_.data() + c * shape_[1] * shape_[2], shape_[1], shape_[2]};
  }

  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), values_); }

  bool all_finite() const { return values_.allFinite(); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

 private:
  void check_matrix(Index rows, Index cols) const {
    if (rows * cols != size()) {
      throw ShapeError("cannot view " + shape_string(shape_) + " as " + std::to_string(rows) + "x" +
                       std::to_string(cols));
    }
  }

  Shape shape_;
  Vector<Scalar> values_;
};

using Tensord = Tensor<double>;

inline void require_rank(const Shape& shape, Index rank, const char* what) {
  if (static_cast<Index>(shape.size()) != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(shape));
  }
}

}  // namespace milseg

#endif  // MILSEG_TENSOR_HPP

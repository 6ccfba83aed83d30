#ifndef MILSEG_AGGREGATION_HPP
#define MILSEG_AGGREGATION_HPP

#include "milseg/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace milseg {

enum class AggregatorVariant { Sum, Max, Lse };

/// How per-location class scores are pooled into one image-level score.
struct AggregatorKind {
  AggregatorVariant variant = AggregatorVariant::Lse;
  double r = 5.0;  // smoothness, used by Lse only

  static AggregatorKind sum() { return {AggregatorVariant::Sum, 0.0}; }
  static AggregatorKind max() { return {AggregatorVariant::Max, 0.0}; }
  static AggregatorKind lse(double r = 5.0) { return {AggregatorVariant::Lse, r}; }

  void validate() const {
    if (variant == AggregatorVariant::Lse && !(r > 0.0 && std::isfinite(r))) {
      throw std::invalid_argument("lse aggregation requires r > 0");
    }
  }

  friend bool operator==(const AggregatorKind&, const AggregatorKind&) = default;
};

std::string to_string(AggregatorVariant v);
AggregatorVariant parse_aggregator(const std::string& name);

/// Pools one plane of scores. Every variant accepts any dense Eigen
/// expression; the plane is read in storage order, so the max tie-break is
/// "first in row-major order" for row-major planes.
///
///   sum: sum of all cells
///   max: largest cell
///   lse: (1/r) log( mean(exp(r s)) ), evaluated with the max shifted out
template <typename Derived>
typename Derived::Scalar aggregate_plane(const Eigen::DenseBase<Derived>& plane, const AggregatorKind& kind) {
  using Scalar = typename Derived::Scalar;
  if (plane.size() == 0) throw ShapeError("aggregate: empty plane");
  switch (kind.variant) {
    case AggregatorVariant::Sum:
      return plane.sum();
    case AggregatorVariant::Max:
      return plane.maxCoeff();
    case AggregatorVariant::Lse: {
      kind.validate();
      const Scalar m = plane.maxCoeff();
      const Scalar r = Scalar(kind.r);
      const Scalar mean = (r * (plane.derived().array() - m)).exp().sum() / Scalar(plane.size());
      return m + std::log(mean) / r;
    }
  }
  throw std::logic_error("unknown aggregator");
}

/// Gradient of `aggregate_plane` w.r.t. every cell, scaled by `grad_out`.
/// For lse the weights are the softmax of r*s and sum to `grad_out`; for max
/// the whole gradient goes to the first maximal cell.
template <typename Derived>
RowMatrix<typename Derived::Scalar> aggregate_plane_backward(const Eigen::DenseBase<Derived>& plane,
                                                             const AggregatorKind& kind,
                                                             typename Derived::Scalar grad_out) {
  using Scalar = typename Derived::Scalar;
  if (plane.size() == 0) throw ShapeError("aggregate: empty plane");
  RowMatrix<Scalar> g(plane.rows(), plane.cols());
  switch (kind.variant) {
    case AggregatorVariant::Sum:
      g.setConstant(grad_out);
      return g;
    case AggregatorVariant::Max: {
      g.setZero();
      // scan in row-major order regardless of the input's storage order
      Index best_r = 0, best_c = 0;
      for (Index i = 0; i < plane.rows(); ++i) {
        for (Index j = 0; j < plane.cols(); ++j) {
          if (plane.derived()(i, j) > plane.derived()(best_r, best_c)) {
            best_r = i;
            best_c = j;
          }
        }
      }
      g(best_r, best_c) = grad_out;
      return g;
    }
    case AggregatorVariant::Lse: {
      kind.validate();
      const Scalar m = plane.maxCoeff();
      g = (Scalar(kind.r) * (plane.derived().array() - m)).exp().matrix();
      g *= grad_out / g.sum();
      return g;
    }
  }
  throw std::logic_error("unknown aggregator");
}

/// Aggregates every plane of a classes x h x w tensor.
template <typename Scalar>
Vector<Scalar> aggregate_forward(const Tensor<Scalar>& planes, const AggregatorKind& kind) {
  require_rank(planes.shape(), 3, "aggregate_forward");
  Vector<Scalar> s(planes.dim(0));
  for (Index k = 0; k < planes.dim(0); ++k) s[k] = aggregate_plane(planes.plane(k), kind);
  return s;
}

template <typename Scalar>
Tensor<Scalar> aggregate_backward(const Tensor<Scalar>& planes, const AggregatorKind& kind,
                                  const Vector<Scalar>& grad_out) {
  require_rank(planes.shape(), 3, "aggregate_backward");
  if (grad_out.size() != planes.dim(0)) throw ShapeError("aggregate_backward: one upstream gradient per class required");
  Tensor<Scalar> g(planes.shape());
  for (Index k = 0; k < planes.dim(0); ++k) g.plane(k) = aggregate_plane_backward(planes.plane(k), kind, grad_out[k]);
  return g;
}

}  // namespace milseg

#endif  // MILSEG_AGGREGATION_HPP

#ifndef MILSEG_LAYERS_HPP
#define MILSEG_LAYERS_HPP

#include "milseg/rng.hpp"
#include "milseg/tensor.hpp"

#include <string>
#include <vector>

namespace milseg {

/// Learnable parameters of one convolution layer together with the momentum
/// buffers the optimizer keeps for them.
template <typename Scalar>
struct LayerParams {
  Tensor<Scalar> weights;  // out x in x kh x kw
  Tensor<Scalar> bias;     // out
  Tensor<Scalar> weights_velocity;
  Tensor<Scalar> bias_velocity;
  bool frozen = false;

  LayerParams() = default;
  LayerParams(Tensor<Scalar> w, Tensor<Scalar> b, bool is_frozen = false)
      : weights(std::move(w)),
        bias(std::move(b)),
        weights_velocity(weights.shape()),
        bias_velocity(bias.shape()),
        frozen(is_frozen) {
    require_rank(weights.shape(), 4, "conv weights");
    require_rank(bias.shape(), 1, "conv bias");
    if (bias.dim(0) != weights.dim(0)) {
      throw ShapeError("bias " + shape_string(bias.shape()) + " does not match weights " +
                       shape_string(weights.shape()));
    }
  }

  Index out_channels() const { return weights.dim(0); }
  Index in_channels() const { return weights.dim(1); }
  Index kernel_h() const { return weights.dim(2); }
  Index kernel_w() const { return weights.dim(3); }
};

template <typename Scalar>
struct LayerGrads {
  Tensor<Scalar> weights;
  Tensor<Scalar> bias;
};

template <typename Scalar>
struct ConvBackward {
  Tensor<Scalar> grad_input;
  Tensor<Scalar> grad_weights;
  Tensor<Scalar> grad_bias;
};

inline Index conv_output_extent(Index in, Index kernel, Index stride) { return (in - kernel) / stride + 1; }

namespace detail {

template <typename Scalar>
void check_conv(const Shape& in, const LayerParams<Scalar>& p, Index stride) {
  require_rank(in, 3, "conv2d input");
  if (stride <= 0) throw ShapeError("conv2d stride must be positive");
  if (in[0] != p.in_channels()) {
    throw ShapeError("conv2d: input " + shape_string(in) + " has " + std::to_string(in[0]) +
                     " channels but kernel " + shape_string(p.weights.shape()) + " expects " +
                     std::to_string(p.in_channels()));
  }
  if (in[1] < p.kernel_h() || in[2] < p.kernel_w()) {
    throw ShapeError("conv2d: input " + shape_string(in) + " smaller than kernel " +
                     shape_string(p.weights.shape()));
  }
}

// Rows are (channel, ky, kx), columns are output positions in row-major order.
template <typename Scalar>
RowMatrix<Scalar> im2col(const Tensor<Scalar>& in, Index kh, Index kw, Index stride) {
  const Index channels = in.dim(0), height = in.dim(1), width = in.dim(2);
  const Index oh = conv_output_extent(height, kh, stride), ow = conv_output_extent(width, kw, stride);
  RowMatrix<Scalar> cols(channels * kh * kw, oh * ow);
  for (Index c = 0; c < channels; ++c) {
    for (Index ky = 0; ky < kh; ++ky) {
      for (Index kx = 0; kx < kw; ++kx) {
        Scalar* row = cols.row((c * kh + ky) * kw + kx).data();
        for (Index oy = 0; oy < oh; ++oy) {
          const Scalar* src = in.data() + (c * height + oy * stride + ky) * width + kx;
          for (Index ox = 0; ox < ow; ++ox) row[oy * ow + ox] = src[ox * stride];
        }
      }
    }
  }
  return cols;
}

template <typename Scalar>
void col2im_add(const RowMatrix<Scalar>& cols, Index kh, Index kw, Index stride, Tensor<Scalar>& out) {
  const Index channels = out.dim(0), height = out.dim(1), width = out.dim(2);
  const Index oh = conv_output_extent(height, kh, stride), ow = conv_output_extent(width, kw, stride);
  for (Index c = 0; c < channels; ++c) {
    for (Index ky = 0; ky < kh; ++ky) {
      for (Index kx = 0; kx < kw; ++kx) {
        const Scalar* row = cols.row((c * kh + ky) * kw + kx).data();
        for (Index oy = 0; oy < oh; ++oy) {
          Scalar* dst = out.data() + (c * height + oy * stride + ky) * width + kx;
          for (Index ox = 0; ox < ow; ++ox) dst[ox * stride] += row[oy * ow + ox];
        }
      }
    }
  }
}

}  // namespace detail

/// Valid (unpadded) 2-D convolution, computed as one GEMM over an im2col
/// buffer. Output is out_channels x H' x W' with H' = (H - Kh) / stride + 1.
template <typename Scalar>
Tensor<Scalar> conv2d_forward(const Tensor<Scalar>& input, const LayerParams<Scalar>& params, Index stride = 1) {
  detail::check_conv(input.shape(), params, stride);
  const Index oh = conv_output_extent(input.dim(1), params.kernel_h(), stride);
  const Index ow = conv_output_extent(input.dim(2), params.kernel_w(), stride);
  const Index out_c = params.out_channels();
  const auto cols = detail::im2col(input, params.kernel_h(), params.kernel_w(), stride);
  const auto w = params.weights.matrix(out_c, cols.rows());

  Tensor<Scalar> out({out_c, oh, ow});
  auto o = out.matrix(out_c, oh * ow);
  o.noalias() = w * cols;
  o.colwise() += params.bias.values();
  return out;
}

template <typename Scalar>
ConvBackward<Scalar> conv2d_backward(const Tensor<Scalar>& input, const LayerParams<Scalar>& params,
                                     const Tensor<Scalar>& grad_out, Index stride = 1,
                                     bool need_input_grad = true) {
  detail::check_conv(input.shape(), params, stride);
  const Index oh = conv_output_extent(input.dim(1), params.kernel_h(), stride);
  const Index ow = conv_output_extent(input.dim(2), params.kernel_w(), stride);
  const Index out_c = params.out_channels();
  const Shape expected{out_c, oh, ow};
  if (grad_out.shape() != expected) {
    throw ShapeError("conv2d_backward: grad_out " + shape_string(grad_out.shape()) + " but forward output is " +
                     shape_string(expected));
  }
  const auto cols = detail::im2col(input, params.kernel_h(), params.kernel_w(), stride);
  const auto w = params.weights.matrix(out_c, cols.rows());
  const auto g = grad_out.matrix(out_c, oh * ow);

  ConvBackward<Scalar> result{Tensor<Scalar>(), Tensor<Scalar>(params.weights.shape()),
                              Tensor<Scalar>(params.bias.shape())};
  result.grad_weights.matrix(out_c, cols.rows()).noalias() = g * cols.transpose();
  result.grad_bias.values() = g.rowwise().sum();
  if (need_input_grad) {
    result.grad_input = Tensor<Scalar>(input.shape());
    const RowMatrix<Scalar> grad_cols = w.transpose() * g;
    detail::col2im_add(grad_cols, params.kernel_h(), params.kernel_w(), stride, result.grad_input);
  }
  return result;
}

template <typename Scalar>
Tensor<Scalar> relu_forward(const Tensor<Scalar>& x) {
  return Tensor<Scalar>(x.shape(), Vector<Scalar>(x.values().cwiseMax(Scalar(0))));
}

/// Gradient is passed where x > 0 and blocked elsewhere (including x == 0).
template <typename Scalar>
Tensor<Scalar> relu_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& grad_out) {
  if (x.shape() != grad_out.shape()) throw ShapeError("relu_backward: shape mismatch");
  Vector<Scalar> g = (x.values().array() > Scalar(0)).select(grad_out.values(), Scalar(0));
  return Tensor<Scalar>(x.shape(), std::move(g));
}

template <typename Scalar>
struct PoolResult {
  Tensor<Scalar> output;
  std::vector<Index> argmax;  // flat input index of each output's winner
  Shape input_shape;
};

/// Max pooling over k x k windows. Ties go to the first element in row-major
/// scan order of the window.
template <typename Scalar>
PoolResult<Scalar> maxpool2d_forward(const Tensor<Scalar>& x, Index k, Index stride) {
  if (k <= 0 || stride <= 0) throw std::invalid_argument("maxpool2d: kernel and stride must be positive");
  require_rank(x.shape(), 3, "maxpool2d input");
  const Index channels = x.dim(0), height = x.dim(1), width = x.dim(2);
  if (height < k || width < k) throw ShapeError("maxpool2d: input " + shape_string(x.shape()) + " smaller than window");
  const Index oh = conv_output_extent(height, k, stride), ow = conv_output_extent(width, k, stride);

  PoolResult<Scalar> r{Tensor<Scalar>({channels, oh, ow}), std::vector<Index>(channels * oh * ow), x.shape()};
  Index o = 0;
  for (Index c = 0; c < channels; ++c) {
    for (Index oy = 0; oy < oh; ++oy) {
      for (Index ox = 0; ox < ow; ++ox, ++o) {
        Index best = (c * height + oy * stride) * width + ox * stride;
        for (Index ky = 0; ky < k; ++ky) {
          for (Index kx = 0; kx < k; ++kx) {
            const Index i = (c * height + oy * stride + ky) * width + ox * stride + kx;
            if (x[i] > x[best]) best = i;
          }
        }
        r.output[o] = x[best];
        r.argmax[static_cast<std::size_t>(o)] = best;
      }
    }
  }
  return r;
}

template <typename Scalar>
Tensor<Scalar> maxpool2d_backward(const std::vector<Index>& argmax, const Shape& input_shape,
                                  const Tensor<Scalar>& grad_out) {
  if (static_cast<Index>(argmax.size()) != grad_out.size()) throw ShapeError("maxpool2d_backward: index count mismatch");
  Tensor<Scalar> g(input_shape);
  for (Index o = 0; o < grad_out.size(); ++o) g[argmax[static_cast<std::size_t>(o)]] += grad_out[o];
  return g;
}

template <typename Scalar>
struct DropoutResult {
  Tensor<Scalar> output;
  Tensor<Scalar> mask;  // 0 for dropped, 1/(1-rate) for kept
};

/// Inverted dropout: kept units are rescaled at training time so the
/// inference path uses the raw activations.
template <typename Scalar>
DropoutResult<Scalar> dropout_forward(const Tensor<Scalar>& x, double rate, RngStream& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout rate must lie in [0, 1)");
  Tensor<Scalar> mask(x.shape());
  const Scalar keep = Scalar(1.0 / (1.0 - rate));
  for (Index i = 0; i < mask.size(); ++i) mask[i] = (rate == 0.0 || rng.uniform() >= rate) ? keep : Scalar(0);
  Tensor<Scalar> out(x.shape(), Vector<Scalar>(x.values().cwiseProduct(mask.values())));
  return {std::move(out), std::move(mask)};
}

template <typename Scalar>
Tensor<Scalar> dropout_backward(const Tensor<Scalar>& mask, const Tensor<Scalar>& grad_out) {
  if (mask.shape() != grad_out.shape()) throw ShapeError("dropout_backward: shape mismatch");
  return Tensor<Scalar>(mask.shape(), Vector<Scalar>(grad_out.values().cwiseProduct(mask.values())));
}

}  // namespace milseg

#endif  // MILSEG_LAYERS_HPP

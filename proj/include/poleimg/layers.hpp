#pragma once

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

#include "poleimg/tensor.hpp"

// Building blocks of the encoder. A feature map is a (channels x H*W) matrix
// whose column p = h*W + w holds all channels of pixel (h, w). Convolutions
// are 3x3, stride 2, zero padding 1, expressed as im2col + GEMM with weight
// matrices laid out as (out, kh, kw, in).

namespace poleimg {

struct SpatialDims {
  int height = 0;
  int width = 0;

  int size() const { return height * width; }
  // Output size of a 3x3 / stride 2 / pad 1 convolution.
  SpatialDims halved() const { return {(height + 1) / 2, (width + 1) / 2}; }
  bool operator==(const SpatialDims&) const = default;
};

template <typename Scalar>
Matrix<Scalar> im2col(const Matrix<Scalar>& in, SpatialDims in_dims) {
  const SpatialDims out_dims = in_dims.halved();
  const Eigen::Index channels = in.rows();
  Matrix<Scalar> cols = Matrix<Scalar>::Zero(9 * channels, out_dims.size());
  for (int oh = 0; oh < out_dims.height; ++oh) {
    for (int ow = 0; ow < out_dims.width; ++ow) {
      const Eigen::Index p = oh * out_dims.width + ow;
      for (int kh = 0; kh < 3; ++kh) {
        const int ih = 2 * oh + kh - 1;
        if (ih < 0 || ih >= in_dims.height) continue;
        for (int kw = 0; kw < 3; ++kw) {
          const int iw = 2 * ow + kw - 1;
          if (iw < 0 || iw >= in_dims.width) continue;
          cols.col(p).segment((kh * 3 + kw) * channels, channels) =
              in.col(ih * in_dims.width + iw);
        }
      }
    }
  }
  return cols;
}

// Adjoint of im2col: scatters patch gradients back onto the input grid.
template <typename Scalar>
Matrix<Scalar> col2im(const Matrix<Scalar>& dcols, Eigen::Index channels, SpatialDims in_dims) {
  const SpatialDims out_dims = in_dims.halved();
  Matrix<Scalar> din = Matrix<Scalar>::Zero(channels, in_dims.size());
  for (int oh = 0; oh < out_dims.height; ++oh) {
    for (int ow = 0; ow < out_dims.width; ++ow) {
      const Eigen::Index p = oh * out_dims.width + ow;
      for (int kh = 0; kh < 3; ++kh) {
        const int ih = 2 * oh + kh - 1;
        if (ih < 0 || ih >= in_dims.height) continue;
        for (int kw = 0; kw < 3; ++kw) {
          const int iw = 2 * ow + kw - 1;
          if (iw < 0 || iw >= in_dims.width) continue;
          din.col(ih * in_dims.width + iw) +=
              dcols.col(p).segment((kh * 3 + kw) * channels, channels);
        }
      }
    }
  }
  return din;
}

// Pre-activation output of a stride-2 convolution.
template <typename Scalar>
Matrix<Scalar> conv_forward(const Matrix<Scalar>& in, SpatialDims in_dims,
                            const Matrix<Scalar>& weight, const Matrix<Scalar>& bias) {
  Matrix<Scalar> out = weight * im2col(in, in_dims);
  out.colwise() += bias.col(0);
  return out;
}

// Accumulates weight/bias gradients; returns the input gradient unless
// `need_input_grad` is false (first layer).
template <typename Scalar>
Matrix<Scalar> conv_backward(const Matrix<Scalar>& in, SpatialDims in_dims,
                             const Matrix<Scalar>& weight, const Matrix<Scalar>& dout,
                             Matrix<Scalar>& dweight, Matrix<Scalar>& dbias,
                             bool need_input_grad = true) {
  const Matrix<Scalar> cols = im2col(in, in_dims);
  dweight.noalias() += dout * cols.transpose();
  dbias.col(0) += dout.rowwise().sum();
  if (!need_input_grad) return {};
  const Matrix<Scalar> dcols = weight.transpose() * dout;
  return col2im(dcols, in.rows(), in_dims);
}

template <typename Scalar>
void relu_inplace(Matrix<Scalar>& x) {
  x = x.cwiseMax(Scalar(0));
}

// Gradient through max(x, 0) given the activation; the derivative at 0 is 0.
template <typename Scalar>
Matrix<Scalar> relu_backward(const Matrix<Scalar>& activation, const Matrix<Scalar>& dout) {
  return (activation.array() > Scalar(0)).select(dout, Scalar(0));
}

template <typename Scalar>
Vector<Scalar> global_average_pool(const Matrix<Scalar>& x) {
  return x.rowwise().mean();
}

template <typename Scalar>
Matrix<Scalar> global_average_pool_backward(const Vector<Scalar>& dpooled, Eigen::Index positions) {
  return (dpooled / static_cast<Scalar>(positions)).replicate(1, positions);
}

inline constexpr double kNormFloor = 1e-12;

// y = x / max(|x|, 1e-12)
template <typename Scalar>
Vector<Scalar> l2_normalize(const Vector<Scalar>& x) {
  return x / std::max<Scalar>(x.norm(), Scalar(kNormFloor));
}

// Jacobian-vector product of l2_normalize at x: (I - y y^T) g / |x|, or
// g / 1e-12 on the floored branch.
template <typename Scalar>
Vector<Scalar> l2_normalize_backward(const Vector<Scalar>& x, const Vector<Scalar>& g) {
  const Scalar n = x.norm();
  if (n <= Scalar(kNormFloor)) return g / Scalar(kNormFloor);
  const Vector<Scalar> y = x / n;
  return (g - y * y.dot(g)) / n;
}

}  // namespace poleimg

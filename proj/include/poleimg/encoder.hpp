#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "poleimg/errors.hpp"
#include "poleimg/layers.hpp"
#include "poleimg/rng.hpp"
#include "poleimg/tensor.hpp"

namespace poleimg {

// Four 3x3 stride-2 convolutions (1 -> 16 -> 32 -> 64 -> 128 channels, ReLU
// after each), global average pooling, a fully connected projection to
// `emb_dim` and L2 normalization.
struct EncoderShape {
  int rows = 80;
  int cols = 360;
  int emb_dim = 128;

  bool operator==(const EncoderShape&) const = default;
};

inline constexpr std::array<int, 5> kEncoderChannels{1, 16, 32, 64, 128};
inline constexpr int kConvStages = 4;
// Tensor order: conv{1..4}.weight, conv{1..4}.bias interleaved, then fc.
inline constexpr std::size_t kEncoderTensorCount = 2 * kConvStages + 2;

inline std::array<SpatialDims, kConvStages + 1> encoder_spatial_dims(const EncoderShape& shape) {
  std::array<SpatialDims, kConvStages + 1> dims{};
  dims[0] = {shape.rows, shape.cols};
  for (int i = 0; i < kConvStages; ++i) dims[i + 1] = dims[i].halved();
  return dims;
}

// He-normal weights (std = sqrt(2 / fan_in)), zero biases.
template <typename Scalar>
ParameterSet<Scalar> init_encoder_params(const EncoderShape& shape, std::uint64_t seed) {
  if (shape.rows < 1 || shape.cols < 1 || shape.emb_dim < 1) {
    throw ShapeError("encoder shape must be positive");
  }
  ParameterSet<Scalar> params;
  for (int i = 0; i < kConvStages; ++i) {
    const auto in = static_cast<std::uint32_t>(kEncoderChannels[i]);
    const auto out = static_cast<std::uint32_t>(kEncoderChannels[i + 1]);
    const std::string prefix = "conv" + std::to_string(i + 1);
    auto w = make_tensor<Scalar>(prefix + ".weight", {out, 3, 3, in});
    Rng rng(seed, "init", static_cast<std::uint64_t>(i));
    const double std_dev = std::sqrt(2.0 / (9.0 * in));
    for (Eigen::Index k = 0; k < w.value.size(); ++k) {
      w.value.data()[k] = static_cast<Scalar>(std_dev * rng.normal());
    }
    params.tensors.push_back(std::move(w));
    params.tensors.push_back(make_tensor<Scalar>(prefix + ".bias", {out}));
  }
  const auto feat = static_cast<std::uint32_t>(kEncoderChannels.back());
  const auto emb = static_cast<std::uint32_t>(shape.emb_dim);
  auto fc = make_tensor<Scalar>("fc.weight", {emb, feat});
  Rng rng(seed, "init", kConvStages);
  const double std_dev = std::sqrt(2.0 / feat);
  for (Eigen::Index k = 0; k < fc.value.size(); ++k) {
    fc.value.data()[k] = static_cast<Scalar>(std_dev * rng.normal());
  }
  params.tensors.push_back(std::move(fc));
  params.tensors.push_back(make_tensor<Scalar>("fc.bias", {emb}));
  return params;
}

template <typename Scalar>
EncoderShape encoder_shape_of(const ParameterSet<Scalar>& params, int rows, int cols) {
  if (params.size() < kEncoderTensorCount || params[2 * kConvStages].name != "fc.weight") {
    throw ContractError("parameter set does not describe an encoder");
  }
  return {rows, cols, static_cast<int>(params[2 * kConvStages].value.rows())};
}

template <typename Scalar>
struct EncoderItemCache {
  Matrix<Scalar> input;  // 1 x H*W
  std::array<Matrix<Scalar>, kConvStages> activations;
  Vector<Scalar> pooled;
  Vector<Scalar> projected;  // before normalization
};

template <typename Scalar>
struct EncoderCache {
  EncoderShape shape;
  std::size_t parameter_count = 0;
  std::vector<EncoderItemCache<Scalar>> items;
};

// Input images are rows x cols with values in {0, 1}.
template <typename Scalar>
using ImageMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {

template <typename Scalar>
void check_encoder_layout(const ParameterSet<Scalar>& params) {
  if (params.size() < kEncoderTensorCount) {
    throw ContractError("encoder parameter set has " + std::to_string(params.size()) + " tensors");
  }
  for (int i = 0; i < kConvStages; ++i) {
    const auto& w = params[2 * i].value;
    if (w.rows() != kEncoderChannels[i + 1] || w.cols() != 9 * kEncoderChannels[i] ||
        params[2 * i + 1].value.rows() != kEncoderChannels[i + 1]) {
      throw ContractError("encoder tensor " + params[2 * i].name + " has unexpected shape");
    }
  }
  if (params[2 * kConvStages].value.cols() != kEncoderChannels.back()) {
    throw ContractError("encoder tensor fc.weight has unexpected shape");
  }
}

}  // namespace detail

// Returns descriptors as columns (emb_dim x batch). When `cache` is given,
// stores what backward needs.
template <typename Scalar>
Matrix<Scalar> encoder_forward(const ParameterSet<Scalar>& params, const EncoderShape& shape,
                               std::span<const ImageMatrix<Scalar>> images,
                               EncoderCache<Scalar>* cache = nullptr) {
  detail::check_encoder_layout(params);
  const auto dims = encoder_spatial_dims(shape);
  const auto& fc_w = params[2 * kConvStages].value;
  const auto& fc_b = params[2 * kConvStages + 1].value;
  if (fc_w.rows() != shape.emb_dim) throw ShapeError("encoder emb_dim does not match parameters");

  Matrix<Scalar> out(shape.emb_dim, static_cast<Eigen::Index>(images.size()));
  if (cache) {
    cache->shape = shape;
    cache->parameter_count = params.parameter_count();
    cache->items.assign(images.size(), {});
  }
  for (std::size_t b = 0; b < images.size(); ++b) {
    const auto& img = images[b];
    if (img.rows() != shape.rows || img.cols() != shape.cols) {
      throw ShapeError("image " + std::to_string(b) + " is " + std::to_string(img.rows()) + "x" +
                       std::to_string(img.cols()) + ", encoder expects " +
                       std::to_string(shape.rows) + "x" + std::to_string(shape.cols));
    }
    Matrix<Scalar> x = Eigen::Map<const Matrix<Scalar>>(img.data(), 1, img.size());
    EncoderItemCache<Scalar> item;
    for (int i = 0; i < kConvStages; ++i) {
      Matrix<Scalar> y = conv_forward(x, dims[i], params[2 * i].value, params[2 * i + 1].value);
      relu_inplace(y);
      if (cache) {
        if (i == 0) item.input = std::move(x);
        item.activations[i] = y;
      }
      x = std::move(y);
    }
    Vector<Scalar> pooled = global_average_pool(x);
    Vector<Scalar> projected = fc_w * pooled + fc_b.col(0);
    out.col(static_cast<Eigen::Index>(b)) = l2_normalize(projected);
    if (cache) {
      item.pooled = std::move(pooled);
      item.projected = std::move(projected);
      cache->items[b] = std::move(item);
    }
  }
  return out;
}

// Gradients of every encoder tensor given d(loss)/d(descriptors). The result
// has the same layout as `params` (extra non-encoder tensors get zeros).
// Items are reduced in batch order, so results are bit-reproducible.
template <typename Scalar>
ParameterSet<Scalar> encoder_backward(const ParameterSet<Scalar>& params,
                                      const EncoderCache<Scalar>& cache,
                                      const Matrix<Scalar>& grad_descriptors) {
  detail::check_encoder_layout(params);
  if (cache.parameter_count != params.parameter_count() ||
      params[2 * kConvStages].value.rows() != cache.shape.emb_dim) {
    throw ContractError("encoder cache was produced with different parameters");
  }
  if (grad_descriptors.cols() != static_cast<Eigen::Index>(cache.items.size()) ||
      grad_descriptors.rows() != cache.shape.emb_dim) {
    throw ContractError("descriptor gradient shape does not match the cached batch");
  }
  const auto dims = encoder_spatial_dims(cache.shape);
  ParameterSet<Scalar> grads = params.zeros_like();
  const auto& fc_w = params[2 * kConvStages].value;

  for (std::size_t b = 0; b < cache.items.size(); ++b) {
    const auto& item = cache.items[b];
    const Vector<Scalar> g = grad_descriptors.col(static_cast<Eigen::Index>(b));
    const Vector<Scalar> dproj = l2_normalize_backward(item.projected, g);
    grads[2 * kConvStages].value.noalias() += dproj * item.pooled.transpose();
    grads[2 * kConvStages + 1].value.col(0) += dproj;
    const Vector<Scalar> dpooled = fc_w.transpose() * dproj;

    Matrix<Scalar> dact = global_average_pool_backward(dpooled, item.activations.back().cols());
    for (int i = kConvStages - 1; i >= 0; --i) {
      const Matrix<Scalar> dpre = relu_backward(item.activations[i], dact);
      const Matrix<Scalar>& in = i == 0 ? item.input : item.activations[i - 1];
      dact = conv_backward(in, dims[i], params[2 * i].value, dpre, grads[2 * i].value,
                           grads[2 * i + 1].value, i > 0);
    }
  }
  return grads;
}

}  // namespace poleimg

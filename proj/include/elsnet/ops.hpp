#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "elsnet/tensor.hpp"

/// Differentiable tensor operations. Every op records a backward rule when
/// any input requires grad; otherwise the result is a plain constant.
/// Implemented for float (training) and double (finite-difference checks).
namespace elsnet::ops {

template <typename T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> div(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> scale(const BasicTensor<T>& a, T s);
template <typename T> BasicTensor<T> add_scalar(const BasicTensor<T>& a, T s);

template <typename T> BasicTensor<T> relu(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> exp(const BasicTensor<T>& x);
/// Natural log; inputs must be strictly positive.
template <typename T> BasicTensor<T> log(const BasicTensor<T>& x);

template <typename T> BasicTensor<T> sum(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> mean(const BasicTensor<T>& x);
/// [C,H,W] -> [C], summing each channel over its spatial extent.
template <typename T> BasicTensor<T> sum_spatial(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> dot(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Cross-correlation of x[Cin,H,W] with w[Cout,Cin,k,k] plus bias[Cout].
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& bias,
                      int stride, int pad);

/// 2x2 max pooling with stride 2. Ties resolve to the first element in row-major order.
template <typename T> BasicTensor<T> max_pool2d(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> upsample_nearest2x(const BasicTensor<T>& x);
/// Half-pixel-center bilinear resampling of every channel (align_corners = false).
template <typename T> BasicTensor<T> bilinear_resize(const BasicTensor<T>& x, std::size_t out_h, std::size_t out_w);

/// Per-channel normalization over the spatial extent of a single image,
/// followed by the affine map gamma * xhat + beta.
template <typename T>
BasicTensor<T> instance_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                             T eps = T(1e-5));

/// Softmax over the channel axis of [K,H,W], stabilized by max subtraction.
template <typename T> BasicTensor<T> softmax_channel(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> log_softmax_channel(const BasicTensor<T>& x);

template <typename T> BasicTensor<T> concat_channels(const std::vector<BasicTensor<T>>& parts);

/// Mean of the columns x[:, i, j] over positions where `indicator` is nonzero.
/// The indicator is a constant; gradients flow only into x.
template <typename T>
BasicTensor<T> masked_mean(const BasicTensor<T>& x, std::span<const std::uint8_t> indicator);

template <typename T> BasicTensor<T> l2_normalize(const BasicTensor<T>& v, T eps = T(1e-12));
/// Packs scalars into a 1-D tensor.
template <typename T> BasicTensor<T> stack(const std::vector<BasicTensor<T>>& scalars);
template <typename T> BasicTensor<T> logsumexp(const BasicTensor<T>& v);
template <typename T> BasicTensor<T> select(const BasicTensor<T>& v, std::size_t index);

}  // namespace elsnet::ops

#pragma once

#include <vector>

#include "reconformer/tensor.hpp"

namespace reconformer {

enum class Padding { Same, Valid };

// Elementwise arithmetic. add/sub/mul accept equal shapes or a size-1 scalar
// on either side; add additionally broadcasts a rank-1 tensor over the last
// axis (bias form).
template <typename S> TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b);
template <typename S> TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b);
template <typename S> TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b);
template <typename S> TensorT<S> scale(const TensorT<S>& a, S factor);
template <typename S> TensorT<S> relu(const TensorT<S>& a);
// tanh approximation with coefficient sqrt(2/pi) = 0.7978845608...
template <typename S> TensorT<S> gelu(const TensorT<S>& a);

template <typename S> TensorT<S> softmax(const TensorT<S>& a, int axis);

// Normalizes over the last (channel) axis; gamma/beta are rank-1 of that
// extent. Population variance, eps inside the square root.
template <typename S>
TensorT<S> layer_norm(const TensorT<S>& a, const TensorT<S>& gamma, const TensorT<S>& beta,
                      S eps = S(1e-5));

// a: [..., m, k], b: [..., k, n] with identical leading axes, or rank-2 b
// broadcast over a's leading axes.
template <typename S> TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b);
template <typename S> TensorT<S> transpose_last2(const TensorT<S>& a);

template <typename S> TensorT<S> reshape(const TensorT<S>& a, Shape shape);
template <typename S> TensorT<S> concat_channels(const std::vector<TensorT<S>>& xs);

template <typename S> TensorT<S> sum_all(const TensorT<S>& a);
// Mean absolute error; subgradient 0 at exact ties.
template <typename S> TensorT<S> l1_loss(const TensorT<S>& pred, const TensorT<S>& target);

// Cross-correlation over [B,H,W,Cin] (rank-3 input is treated as B=1) with
// weight [kh,kw,Cin,Cout] and optional rank-1 bias. Odd kernels only; Same
// padding is (k-1)/2 per side. transposed=true computes the adjoint map, so
// stride 2 doubles the spatial extent.
template <typename S>
TensorT<S> conv2d(const TensorT<S>& input, const TensorT<S>& weight, const TensorT<S>& bias,
                  int stride, Padding padding, bool transposed = false);

// Centered orthonormal FFT pair on [H,W,2] tensors; the backward pass applies
// the inverse transform (the adjoint of a unitary map).
template <typename S> TensorT<S> fft2c_op(const TensorT<S>& image);
template <typename S> TensorT<S> ifft2c_op(const TensorT<S>& kspace);

// Cyclic shift of the two leading axes of [H,W,C].
template <typename S> TensorT<S> roll2d(const TensorT<S>& a, int shift_r, int shift_c);

// [H,W,C] -> [H*W/K^2, K^2, C] after a cyclic roll by (-shift, -shift);
// windows in row-major order. merge is the exact inverse.
template <typename S> TensorT<S> window_partition_op(const TensorT<S>& feat, int window, int shift);
template <typename S>
TensorT<S> window_merge_op(const TensorT<S>& windows, int height, int width, int window, int shift);

// Per-window s x s box filter, stride 1, same padding with in-bounds
// averaging at the edges; input [num_windows, K^2, C]. s = 1 is the identity.
template <typename S> TensorT<S> box_filter_windows(const TensorT<S>& windows, int window, int s);

}  // namespace reconformer

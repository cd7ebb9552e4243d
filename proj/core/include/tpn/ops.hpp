#pragma once

// Differentiable tensor operations. Every op is instantiated for float and
// double; the double path exists for gradient checking.

#include <vector>

#include "tpn/tensor.hpp"

namespace tpn {

enum class Padding { Zero, Valid };

// Elementwise, identical shapes.
template <class T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T> BasicTensor<T> scale(const BasicTensor<T>& a, T s);
template <class T> BasicTensor<T> add_scalar(const BasicTensor<T>& a, T s);
// a * s where s is a one-element tensor.
template <class T> BasicTensor<T> scale_by(const BasicTensor<T>& a, const BasicTensor<T>& s);

template <class T> BasicTensor<T> square(const BasicTensor<T>& x);
template <class T> BasicTensor<T> exp(const BasicTensor<T>& x);
template <class T> BasicTensor<T> sigmoid(const BasicTensor<T>& x);
template <class T> BasicTensor<T> tanh(const BasicTensor<T>& x);
template <class T> BasicTensor<T> softplus(const BasicTensor<T>& x);
// Per-channel PReLU. The channel axis is 1 for rank >= 2; alpha has one entry
// per channel (or a single shared entry).
template <class T> BasicTensor<T> prelu(const BasicTensor<T>& x, const BasicTensor<T>& alpha);

// Reductions to shape (1).
template <class T> BasicTensor<T> sum(const BasicTensor<T>& x);
template <class T> BasicTensor<T> mean(const BasicTensor<T>& x);
// mean((a-b)^2)
template <class T> BasicTensor<T> mse(const BasicTensor<T>& a, const BasicTensor<T>& b);
// mean of 0.5 r^2 / beta for |r| < beta, |r| - 0.5 beta otherwise.
template <class T> BasicTensor<T> smooth_l1(const BasicTensor<T>& a, const BasicTensor<T>& b, T beta);

template <class T> BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);
// x [M,K] * w [K,N] + bias [N]
template <class T> BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& w,
                                         const BasicTensor<T>& bias);
template <class T> BasicTensor<T> transpose(const BasicTensor<T>& a);

template <class T> BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape);
template <class T> BasicTensor<T> slice(const BasicTensor<T>& x, int axis, int64_t begin, int64_t end);
template <class T> BasicTensor<T> concat(const std::vector<BasicTensor<T>>& xs, int axis);
// [1, D] -> [k, D]
template <class T> BasicTensor<T> repeat_rows(const BasicTensor<T>& x, int64_t k);

// Cross-correlation. x [N,C,H,W], w [O,C,kh,kw], bias [O] or undefined.
// Zero padding pads (k-1)/2 on each side; Valid pads nothing.
template <class T> BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w,
                                         const BasicTensor<T>& bias, int stride, Padding padding);
// x [N,C,H,W] scaled by g [N,C] per channel.
template <class T> BasicTensor<T> mul_channel(const BasicTensor<T>& x, const BasicTensor<T>& g);
// [N, r*r*C, H, W] -> [N, C, r*H, r*W]; out[c, h*r+i, w*r+j] = in[c*r*r + i*r + j, h, w].
template <class T> BasicTensor<T> pixel_shuffle(const BasicTensor<T>& x, int r);
template <class T> BasicTensor<T> space_to_depth(const BasicTensor<T>& x, int r);
template <class T> BasicTensor<T> avg_pool2d(const BasicTensor<T>& x, int k);
// [N,C,H,W] -> [N,C]
template <class T> BasicTensor<T> global_avg_pool(const BasicTensor<T>& x);
// Rows of [N,D] scaled to unit Euclidean norm.
template <class T> BasicTensor<T> l2_normalize_rows(const BasicTensor<T>& x);

// Bilinear sampling of plane [C,H,W] at coords [M,2] (x along W, y along H).
// Align-corners: -1 maps to texel center 0 and +1 to texel center size-1.
// Coordinates outside [-1,1] clamp to the border. Result [M,C].
template <class T> BasicTensor<T> grid_sample_2d(const BasicTensor<T>& plane, const BasicTensor<T>& coords);

namespace kernels {

// Bilinear tap for an align-corners coordinate on an axis of `size` texels.
// Returns the lower index, the fractional weight of the upper texel and the
// derivative of the continuous index with respect to the coordinate (zero
// when clamped).
template <class T>
struct Tap {
  int64_t i0;
  int64_t i1;
  T frac;
  T dindex;
};

template <class T>
inline Tap<T> bilinear_tap(T coord, int64_t size) {
  if (size == 1) return {0, 0, T(0), T(0)};
  const T hi = static_cast<T>(size - 1);
  T pos = (coord + T(1)) * T(0.5) * hi;
  T dindex = T(0.5) * hi;
  if (pos <= T(0)) {
    pos = T(0);
    dindex = T(0);
  } else if (pos >= hi) {
    pos = hi;
    dindex = T(0);
  }
  int64_t i0 = static_cast<int64_t>(pos);
  if (i0 >= size - 1) i0 = size - 2;
  return {i0, i0 + 1, pos - static_cast<T>(i0), dindex};
}

}  // namespace kernels

}  // namespace tpn

#include "tpn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "tpn/parallel.hpp"

namespace tpn {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;
template <class T>
using CMapVec = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

template <class T>
void require_same_shape(const char* op, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

template <class T>
void require_rank(const char* op, const BasicTensor<T>& a, int rank) {
  if (a.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         to_string(a.shape()));
  }
}

// Elementwise unary op; dfdx(x, y) gives the local derivative.
template <class T, class F, class D>
BasicTensor<T> unary(const char* name, const BasicTensor<T>& x, F f, D dfdx) {
  const auto xs = x.data();
  std::vector<T> y(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) y[i] = f(xs[i]);
  return detail::record<T>(name, x.shape(), std::move(y), {&x}, [dfdx](Node<T>& self) {
    T* gx = detail::parent_grad(self, 0);
    if (!gx) return;
    const auto& xv = self.parents[0]->value;
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += self.grad[i] * dfdx(xv[i], self.value[i]);
  });
}

template <class T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("add", a, b);
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<T> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
  return detail::record<T>("add", a.shape(), std::move(y), {&a, &b}, [](Node<T>& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (T* g = detail::parent_grad(self, p)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

template <class T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("sub", a, b);
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<T> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] - bv[i];
  return detail::record<T>("sub", a.shape(), std::move(y), {&a, &b}, [](Node<T>& self) {
    if (T* g = detail::parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (T* g = detail::parent_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("mul", a, b);
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<T> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * bv[i];
  return detail::record<T>("mul", a.shape(), std::move(y), {&a, &b}, [](Node<T>& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (T* g = detail::parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (T* g = detail::parent_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

template <class T>
BasicTensor<T> scale(const BasicTensor<T>& a, T s) {
  return unary<T>("scale", a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <class T>
BasicTensor<T> add_scalar(const BasicTensor<T>& a, T s) {
  return unary<T>("add_scalar", a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <class T>
BasicTensor<T> scale_by(const BasicTensor<T>& a, const BasicTensor<T>& s) {
  if (s.numel() != 1) throw DimensionError("scale_by: factor must have one element");
  const T k = s.item();
  const auto av = a.data();
  std::vector<T> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * k;
  return detail::record<T>("scale_by", a.shape(), std::move(y), {&a, &s}, [](Node<T>& self) {
    const auto& av = self.parents[0]->value;
    const T k = self.parents[1]->value[0];
    if (T* g = detail::parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * k;
    }
    if (T* g = detail::parent_grad(self, 1)) {
      double acc = 0;
      for (std::size_t i = 0; i < self.grad.size(); ++i) acc += double(self.grad[i]) * av[i];
      g[0] += static_cast<T>(acc);
    }
  });
}

template <class T>
BasicTensor<T> square(const BasicTensor<T>& x) {
  return unary<T>("square", x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <class T>
BasicTensor<T> exp(const BasicTensor<T>& x) {
  return unary<T>("exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <class T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
  return unary<T>("sigmoid", x, [](T v) { return stable_sigmoid(v); },
                  [](T, T y) { return y * (T(1) - y); });
}

template <class T>
BasicTensor<T> tanh(const BasicTensor<T>& x) {
  return unary<T>("tanh", x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <class T>
BasicTensor<T> softplus(const BasicTensor<T>& x) {
  return unary<T>(
      "softplus", x, [](T v) { return std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v))); },
      [](T v, T) { return stable_sigmoid(v); });
}

template <class T>
BasicTensor<T> prelu(const BasicTensor<T>& x, const BasicTensor<T>& alpha) {
  const int64_t channels = x.rank() >= 2 ? x.dim(1) : 1;
  const int64_t na = alpha.numel();
  if (na != 1 && na != channels) {
    throw DimensionError("prelu: alpha has " + std::to_string(na) + " entries for " +
                         std::to_string(channels) + " channels");
  }
  int64_t inner = 1;
  for (int d = 2; d < x.rank(); ++d) inner *= x.dim(d);
  const int64_t outer = x.numel() / (channels * inner);
  const auto xv = x.data();
  const auto av = alpha.data();
  std::vector<T> y(xv.size());
  // Visits (element index, channel) in storage order.
  auto each = [=](auto&& fn) {
    int64_t i = 0;
    for (int64_t o = 0; o < outer; ++o) {
      for (int64_t c = 0; c < channels; ++c) {
        const int64_t a = na == 1 ? 0 : c;
        for (int64_t k = 0; k < inner; ++k, ++i) fn(i, a);
      }
    }
  };
  // Branch-free: the sign of pre-activations is close to random.
  each([&](int64_t i, int64_t a) { y[i] = std::max(xv[i], T(0)) + av[a] * std::min(xv[i], T(0)); });
  return detail::record<T>("prelu", x.shape(), std::move(y), {&x, &alpha}, [each](Node<T>& self) {
    const auto& xv = self.parents[0]->value;
    const auto& av = self.parents[1]->value;
    T* gx = detail::parent_grad(self, 0);
    T* ga = detail::parent_grad(self, 1);
    if (gx) each([&](int64_t i, int64_t a) { gx[i] += self.grad[i] * (xv[i] > T(0) ? T(1) : av[a]); });
    if (ga) each([&](int64_t i, int64_t a) { ga[a] += self.grad[i] * std::min(xv[i], T(0)); });
  });
}

template <class T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  double acc = 0;
  for (T v : x.data()) acc += v;
  return detail::record<T>("sum", {1}, {static_cast<T>(acc)}, {&x}, [](Node<T>& self) {
    if (T* g = detail::parent_grad(self, 0)) {
      const T s = self.grad[0];
      const auto n = self.parents[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += s;
    }
  });
}

template <class T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
  double acc = 0;
  for (T v : x.data()) acc += v;
  const double n = static_cast<double>(x.numel());
  return detail::record<T>("mean", {1}, {static_cast<T>(acc / n)}, {&x}, [](Node<T>& self) {
    if (T* g = detail::parent_grad(self, 0)) {
      const auto n = self.parents[0]->value.size();
      const T s = self.grad[0] / static_cast<T>(n);
      for (std::size_t i = 0; i < n; ++i) g[i] += s;
    }
  });
}

template <class T>
BasicTensor<T> mse(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("mse", a, b);
  const auto av = a.data();
  const auto bv = b.data();
  double acc = 0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double r = double(av[i]) - double(bv[i]);
    acc += r * r;
  }
  const double n = static_cast<double>(av.size());
  return detail::record<T>("mse", {1}, {static_cast<T>(acc / n)}, {&a, &b}, [](Node<T>& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    const T s = T(2) * self.grad[0] / static_cast<T>(av.size());
    T* ga = detail::parent_grad(self, 0);
    T* gb = detail::parent_grad(self, 1);
    for (std::size_t i = 0; i < av.size(); ++i) {
      const T d = s * (av[i] - bv[i]);
      if (ga) ga[i] += d;
      if (gb) gb[i] -= d;
    }
  });
}

template <class T>
BasicTensor<T> smooth_l1(const BasicTensor<T>& a, const BasicTensor<T>& b, T beta) {
  require_same_shape("smooth_l1", a, b);
  if (!(beta > T(0))) throw UsageError("smooth_l1: beta must be positive");
  const auto av = a.data();
  const auto bv = b.data();
  double acc = 0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double r = std::abs(double(av[i]) - double(bv[i]));
    acc += r < beta ? 0.5 * r * r / beta : r - 0.5 * beta;
  }
  const double n = static_cast<double>(av.size());
  return detail::record<T>("smooth_l1", {1}, {static_cast<T>(acc / n)}, {&a, &b},
                           [beta](Node<T>& self) {
                             const auto& av = self.parents[0]->value;
                             const auto& bv = self.parents[1]->value;
                             const T s = self.grad[0] / static_cast<T>(av.size());
                             T* ga = detail::parent_grad(self, 0);
                             T* gb = detail::parent_grad(self, 1);
                             for (std::size_t i = 0; i < av.size(); ++i) {
                               const T r = av[i] - bv[i];
                               T d = std::abs(r) < beta ? r / beta : (r > T(0) ? T(1) : T(-1));
                               d *= s;
                               if (ga) ga[i] += d;
                               if (gb) gb[i] -= d;
                             }
                           });
}

template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ " + to_string(a.shape()) + " x " +
                         to_string(b.shape()));
  }
  std::vector<T> y(static_cast<std::size_t>(m * n));
  MapMat<T>(y.data(), m, n).noalias() =
      CMapMat<T>(a.data().data(), m, k) * CMapMat<T>(b.data().data(), k, n);
  return detail::record<T>("matmul", {m, n}, std::move(y), {&a, &b}, [m, k, n](Node<T>& self) {
    CMapMat<T> g(self.grad.data(), m, n);
    if (T* ga = detail::parent_grad(self, 0)) {
      MapMat<T>(ga, m, k).noalias() += g * CMapMat<T>(self.parents[1]->value.data(), k, n).transpose();
    }
    if (T* gb = detail::parent_grad(self, 1)) {
      MapMat<T>(gb, k, n).noalias() += CMapMat<T>(self.parents[0]->value.data(), m, k).transpose() * g;
    }
  });
}

template <class T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& bias) {
  require_rank("linear", x, 2);
  require_rank("linear", w, 2);
  const int64_t m = x.dim(0), k = x.dim(1), n = w.dim(1);
  if (w.dim(0) != k || bias.numel() != n) {
    throw DimensionError("linear: incompatible shapes " + to_string(x.shape()) + ", " +
                         to_string(w.shape()) + ", " + to_string(bias.shape()));
  }
  std::vector<T> y(static_cast<std::size_t>(m * n));
  MapMat<T> ym(y.data(), m, n);
  ym.noalias() = CMapMat<T>(x.data().data(), m, k) * CMapMat<T>(w.data().data(), k, n);
  ym.rowwise() += CMapVec<T>(bias.data().data(), n).transpose();
  return detail::record<T>("linear", {m, n}, std::move(y), {&x, &w, &bias}, [m, k, n](Node<T>& self) {
    CMapMat<T> g(self.grad.data(), m, n);
    if (T* gx = detail::parent_grad(self, 0)) {
      MapMat<T>(gx, m, k).noalias() += g * CMapMat<T>(self.parents[1]->value.data(), k, n).transpose();
    }
    if (T* gw = detail::parent_grad(self, 1)) {
      MapMat<T>(gw, k, n).noalias() += CMapMat<T>(self.parents[0]->value.data(), m, k).transpose() * g;
    }
    if (T* gb = detail::parent_grad(self, 2)) {
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) gb[j] += g(i, j);
    }
  });
}

template <class T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
  require_rank("transpose", a, 2);
  const int64_t m = a.dim(0), n = a.dim(1);
  std::vector<T> y(static_cast<std::size_t>(m * n));
  MapMat<T>(y.data(), n, m) = CMapMat<T>(a.data().data(), m, n).transpose();
  return detail::record<T>("transpose", {n, m}, std::move(y), {&a}, [m, n](Node<T>& self) {
    if (T* g = detail::parent_grad(self, 0)) {
      MapMat<T>(g, m, n) += CMapMat<T>(self.grad.data(), n, m).transpose();
    }
  });
}

template <class T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  std::vector<T> y(x.data().begin(), x.data().end());
  return detail::record<T>("reshape", std::move(shape), std::move(y), {&x}, [](Node<T>& self) {
    if (T* g = detail::parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <class T>
BasicTensor<T> slice(const BasicTensor<T>& x, int axis, int64_t begin, int64_t end) {
  if (axis < 0) axis += x.rank();
  if (axis < 0 || axis >= x.rank() || begin < 0 || end > x.dim(axis) || begin >= end) {
    throw DimensionError("slice: invalid range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") on axis " + std::to_string(axis) + " of " + to_string(x.shape()));
  }
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= x.dim(d);
  for (int d = axis + 1; d < x.rank(); ++d) inner *= x.dim(d);
  const int64_t len = end - begin, full = x.dim(axis);
  Shape shape = x.shape();
  shape[static_cast<std::size_t>(axis)] = len;
  std::vector<T> y(static_cast<std::size_t>(outer * len * inner));
  const T* src = x.data().data();
  for (int64_t o = 0; o < outer; ++o) {
    std::copy_n(src + (o * full + begin) * inner, len * inner, y.data() + o * len * inner);
  }
  return detail::record<T>("slice", std::move(shape), std::move(y), {&x},
                           [=](Node<T>& self) {
                             T* g = detail::parent_grad(self, 0);
                             if (!g) return;
                             for (int64_t o = 0; o < outer; ++o) {
                               T* dst = g + (o * full + begin) * inner;
                               const T* s = self.grad.data() + o * len * inner;
                               for (int64_t i = 0; i < len * inner; ++i) dst[i] += s[i];
                             }
                           });
}

template <class T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& xs, int axis) {
  if (xs.empty()) throw DimensionError("concat: no inputs");
  const int rank = xs[0].rank();
  if (axis < 0) axis += rank;
  Shape shape = xs[0].shape();
  int64_t total = 0;
  std::vector<int64_t> lens;
  for (const auto& x : xs) {
    bool ok = x.rank() == rank;
    for (int d = 0; ok && d < rank; ++d) ok = d == axis || x.dim(d) == shape[static_cast<std::size_t>(d)];
    if (!ok) throw DimensionError("concat: incompatible shape " + to_string(x.shape()));
    lens.push_back(x.dim(axis));
    total += x.dim(axis);
  }
  shape[static_cast<std::size_t>(axis)] = total;
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= shape[static_cast<std::size_t>(d)];
  for (int d = axis + 1; d < rank; ++d) inner *= shape[static_cast<std::size_t>(d)];
  std::vector<T> y(static_cast<std::size_t>(numel(shape)));
  int64_t offset = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const T* src = xs[i].data().data();
    for (int64_t o = 0; o < outer; ++o) {
      std::copy_n(src + o * lens[i] * inner, lens[i] * inner, y.data() + (o * total + offset) * inner);
    }
    offset += lens[i];
  }
  return detail::record<T>("concat", std::move(shape), std::move(y), xs, [=](Node<T>& self) {
    int64_t off = 0;
    for (std::size_t i = 0; i < lens.size(); ++i) {
      if (T* g = detail::parent_grad(self, i)) {
        for (int64_t o = 0; o < outer; ++o) {
          const T* s = self.grad.data() + (o * total + off) * inner;
          T* dst = g + o * lens[i] * inner;
          for (int64_t j = 0; j < lens[i] * inner; ++j) dst[j] += s[j];
        }
      }
      off += lens[i];
    }
  });
}

template <class T>
BasicTensor<T> repeat_rows(const BasicTensor<T>& x, int64_t k) {
  if (x.rank() != 2 || x.dim(0) != 1 || k < 1) {
    throw DimensionError("repeat_rows: expected [1,D], got " + to_string(x.shape()));
  }
  const int64_t d = x.dim(1);
  std::vector<T> y(static_cast<std::size_t>(k * d));
  for (int64_t r = 0; r < k; ++r) std::copy_n(x.data().data(), d, y.data() + r * d);
  return detail::record<T>("repeat_rows", {k, d}, std::move(y), {&x}, [k, d](Node<T>& self) {
    if (T* g = detail::parent_grad(self, 0)) {
      for (int64_t r = 0; r < k; ++r) {
        for (int64_t j = 0; j < d; ++j) g[j] += self.grad[static_cast<std::size_t>(r * d + j)];
      }
    }
  });
}

namespace {

struct ConvGeom {
  int64_t n, c, h, w, o, kh, kw, stride, ph, pw, ho, wo;
  int64_t cols_rows() const { return c * kh * kw; }
  int64_t cols_cols() const { return ho * wo; }
  bool is_pointwise() const { return kh == 1 && kw == 1 && stride == 1 && ph == 0 && pw == 0; }
};

template <class T>
void im2col(const ConvGeom& g, const T* x, T* cols) {
  for (int64_t c = 0; c < g.c; ++c) {
    for (int64_t i = 0; i < g.kh; ++i) {
      for (int64_t j = 0; j < g.kw; ++j) {
        T* row = cols + ((c * g.kh + i) * g.kw + j) * g.ho * g.wo;
        for (int64_t oy = 0; oy < g.ho; ++oy) {
          const int64_t iy = oy * g.stride - g.ph + i;
          T* dst = row + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill_n(dst, g.wo, T(0));
            continue;
          }
          const T* src = x + (c * g.h + iy) * g.w;
          for (int64_t ox = 0; ox < g.wo; ++ox) {
            const int64_t ix = ox * g.stride - g.pw + j;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const ConvGeom& g, const T* cols, T* x) {
  for (int64_t c = 0; c < g.c; ++c) {
    for (int64_t i = 0; i < g.kh; ++i) {
      for (int64_t j = 0; j < g.kw; ++j) {
        const T* row = cols + ((c * g.kh + i) * g.kw + j) * g.ho * g.wo;
        for (int64_t oy = 0; oy < g.ho; ++oy) {
          const int64_t iy = oy * g.stride - g.ph + i;
          if (iy < 0 || iy >= g.h) continue;
          T* dst = x + (c * g.h + iy) * g.w;
          const T* src = row + oy * g.wo;
          for (int64_t ox = 0; ox < g.wo; ++ox) {
            const int64_t ix = ox * g.stride - g.pw + j;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& bias,
                      int stride, Padding padding) {
  require_rank("conv2d", x, 4);
  require_rank("conv2d", w, 4);
  if (stride < 1) throw DimensionError("conv2d: stride must be >= 1");
  if (w.dim(1) != x.dim(1)) {
    throw DimensionError("conv2d: kernel " + to_string(w.shape()) + " does not match input " +
                         to_string(x.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && bias.numel() != w.dim(0)) throw DimensionError("conv2d: bias size mismatch");
  ConvGeom g{};
  g.n = x.dim(0);
  g.c = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.o = w.dim(0);
  g.kh = w.dim(2);
  g.kw = w.dim(3);
  g.stride = stride;
  g.ph = padding == Padding::Zero ? (g.kh - 1) / 2 : 0;
  g.pw = padding == Padding::Zero ? (g.kw - 1) / 2 : 0;
  const int64_t span_h = g.h + 2 * g.ph - g.kh;
  const int64_t span_w = g.w + 2 * g.pw - g.kw;
  if (span_h < 0 || span_w < 0) {
    throw DimensionError("conv2d: kernel " + to_string(w.shape()) + " does not fit input " +
                         to_string(x.shape()));
  }
  g.ho = span_h / stride + 1;
  g.wo = span_w / stride + 1;

  const int64_t kr = g.cols_rows(), kc = g.cols_cols();
  std::vector<T> y(static_cast<std::size_t>(g.n * g.o * kc));
  std::vector<T> cols(g.is_pointwise() ? 0 : static_cast<std::size_t>(kr * kc));
  CMapMat<T> wm(w.data().data(), g.o, kr);
  for (int64_t n = 0; n < g.n; ++n) {
    const T* xn = x.data().data() + n * g.c * g.h * g.w;
    const T* cp = xn;
    if (!g.is_pointwise()) {
      im2col(g, xn, cols.data());
      cp = cols.data();
    }
    MapMat<T> yn(y.data() + n * g.o * kc, g.o, kc);
    yn.noalias() = wm * CMapMat<T>(cp, kr, kc);
    if (has_bias) yn.colwise() += CMapVec<T>(bias.data().data(), g.o);
  }

  std::vector<BasicTensor<T>> inputs{x, w};
  if (has_bias) inputs.push_back(bias);
  return detail::record<T>("conv2d", {g.n, g.o, g.ho, g.wo}, std::move(y), inputs,
                           [g, has_bias](Node<T>& self) {
                             const int64_t kr = g.cols_rows(), kc = g.cols_cols();
                             T* gx = detail::parent_grad(self, 0);
                             T* gw = detail::parent_grad(self, 1);
                             T* gb = has_bias ? detail::parent_grad(self, 2) : nullptr;
                             const auto& xv = self.parents[0]->value;
                             CMapMat<T> wm(self.parents[1]->value.data(), g.o, kr);
                             std::vector<T> cols(g.is_pointwise() ? 0 : static_cast<std::size_t>(kr * kc));
                             std::vector<T> dcols(gx && !g.is_pointwise() ? static_cast<std::size_t>(kr * kc) : 0);
                             for (int64_t n = 0; n < g.n; ++n) {
                               CMapMat<T> gy(self.grad.data() + n * g.o * kc, g.o, kc);
                               const T* xn = xv.data() + n * g.c * g.h * g.w;
                               if (gw) {
                                 const T* cp = xn;
                                 if (!g.is_pointwise()) {
                                   im2col(g, xn, cols.data());
                                   cp = cols.data();
                                 }
                                 MapMat<T>(gw, g.o, kr).noalias() += gy * CMapMat<T>(cp, kr, kc).transpose();
                               }
                               if (gb) {
                                 // plain loop: Eigen's contiguous reductions depend on buffer alignment
                                 for (int64_t o = 0; o < g.o; ++o) {
                                   T acc = 0;
                                   for (int64_t j = 0; j < kc; ++j) acc += gy(o, j);
                                   gb[o] += acc;
                                 }
                               }
                               if (gx) {
                                 T* gxn = gx + n * g.c * g.h * g.w;
                                 if (g.is_pointwise()) {
                                   MapMat<T>(gxn, kr, kc).noalias() += wm.transpose() * gy;
                                 } else {
                                   MapMat<T>(dcols.data(), kr, kc).noalias() = wm.transpose() * gy;
                                   col2im_add(g, dcols.data(), gxn);
                                 }
                               }
                             }
                           });
}

template <class T>
BasicTensor<T> mul_channel(const BasicTensor<T>& x, const BasicTensor<T>& g) {
  require_rank("mul_channel", x, 4);
  if (g.rank() != 2 || g.dim(0) != x.dim(0) || g.dim(1) != x.dim(1)) {
    throw DimensionError("mul_channel: gains " + to_string(g.shape()) + " do not match " +
                         to_string(x.shape()));
  }
  const int64_t nc = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
  const auto xv = x.data();
  const auto gv = g.data();
  std::vector<T> y(xv.size());
  for (int64_t i = 0; i < nc; ++i) {
    for (int64_t j = 0; j < hw; ++j) y[i * hw + j] = xv[i * hw + j] * gv[i];
  }
  return detail::record<T>("mul_channel", x.shape(), std::move(y), {&x, &g}, [nc, hw](Node<T>& self) {
    const auto& xv = self.parents[0]->value;
    const auto& gv = self.parents[1]->value;
    T* gx = detail::parent_grad(self, 0);
    T* gg = detail::parent_grad(self, 1);
    for (int64_t i = 0; i < nc; ++i) {
      T acc = 0;
      for (int64_t j = 0; j < hw; ++j) {
        const T go = self.grad[i * hw + j];
        if (gx) gx[i * hw + j] += go * gv[i];
        acc += go * xv[i * hw + j];
      }
      if (gg) gg[i] += acc;
    }
  });
}

namespace {

// Index of pixel_shuffle output element in the input, for each output position.
std::vector<int64_t> shuffle_index(int64_t n, int64_t c, int64_t h, int64_t w, int64_t r) {
  std::vector<int64_t> idx(static_cast<std::size_t>(n * c * h * r * w * r));
  std::size_t k = 0;
  const int64_t cin = c * r * r;
  for (int64_t b = 0; b < n; ++b) {
    for (int64_t ch = 0; ch < c; ++ch) {
      for (int64_t y = 0; y < h * r; ++y) {
        for (int64_t xo = 0; xo < w * r; ++xo) {
          const int64_t src_c = ch * r * r + (y % r) * r + (xo % r);
          idx[k++] = ((b * cin + src_c) * h + y / r) * w + xo / r;
        }
      }
    }
  }
  return idx;
}

}  // namespace

template <class T>
BasicTensor<T> pixel_shuffle(const BasicTensor<T>& x, int r) {
  require_rank("pixel_shuffle", x, 4);
  if (r < 1 || x.dim(1) % (int64_t(r) * r) != 0) {
    throw DimensionError("pixel_shuffle: channels " + std::to_string(x.dim(1)) +
                         " not divisible by r^2 = " + std::to_string(r * r));
  }
  const int64_t n = x.dim(0), c = x.dim(1) / (r * r), h = x.dim(2), w = x.dim(3);
  auto idx = shuffle_index(n, c, h, w, r);
  std::vector<T> y(idx.size());
  const auto xv = x.data();
  for (std::size_t i = 0; i < idx.size(); ++i) y[i] = xv[static_cast<std::size_t>(idx[i])];
  return detail::record<T>("pixel_shuffle", {n, c, h * r, w * r}, std::move(y), {&x},
                           [idx = std::move(idx)](Node<T>& self) {
                             if (T* g = detail::parent_grad(self, 0)) {
                               for (std::size_t i = 0; i < idx.size(); ++i) g[idx[i]] += self.grad[i];
                             }
                           });
}

template <class T>
BasicTensor<T> space_to_depth(const BasicTensor<T>& x, int r) {
  require_rank("space_to_depth", x, 4);
  if (r < 1 || x.dim(2) % r != 0 || x.dim(3) % r != 0) {
    throw DimensionError("space_to_depth: spatial size not divisible by " + std::to_string(r));
  }
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2) / r, w = x.dim(3) / r;
  // The shuffle index maps each spatial element to its depth position.
  auto idx = shuffle_index(n, c, h, w, r);
  std::vector<T> y(idx.size());
  const auto xv = x.data();
  for (std::size_t i = 0; i < idx.size(); ++i) y[static_cast<std::size_t>(idx[i])] = xv[i];
  return detail::record<T>("space_to_depth", {n, c * r * r, h, w}, std::move(y), {&x},
                           [idx = std::move(idx)](Node<T>& self) {
                             if (T* g = detail::parent_grad(self, 0)) {
                               for (std::size_t i = 0; i < idx.size(); ++i) g[i] += self.grad[idx[i]];
                             }
                           });
}

template <class T>
BasicTensor<T> avg_pool2d(const BasicTensor<T>& x, int k) {
  require_rank("avg_pool2d", x, 4);
  if (k < 1 || x.dim(2) % k != 0 || x.dim(3) % k != 0) {
    throw DimensionError("avg_pool2d: spatial size " + to_string(x.shape()) + " not divisible by " +
                         std::to_string(k));
  }
  const int64_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3), ho = h / k, wo = w / k;
  const T inv = T(1) / static_cast<T>(k * k);
  const auto xv = x.data();
  std::vector<T> y(static_cast<std::size_t>(nc * ho * wo), T(0));
  for (int64_t p = 0; p < nc; ++p) {
    for (int64_t i = 0; i < h; ++i) {
      for (int64_t j = 0; j < w; ++j) y[(p * ho + i / k) * wo + j / k] += xv[(p * h + i) * w + j];
    }
  }
  for (auto& v : y) v *= inv;
  return detail::record<T>("avg_pool2d", {x.dim(0), x.dim(1), ho, wo}, std::move(y), {&x},
                           [=](Node<T>& self) {
                             T* g = detail::parent_grad(self, 0);
                             if (!g) return;
                             for (int64_t p = 0; p < nc; ++p) {
                               for (int64_t i = 0; i < h; ++i) {
                                 for (int64_t j = 0; j < w; ++j) {
                                   g[(p * h + i) * w + j] += inv * self.grad[(p * ho + i / k) * wo + j / k];
                                 }
                               }
                             }
                           });
}

template <class T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x) {
  require_rank("global_avg_pool", x, 4);
  const int64_t nc = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
  const auto xv = x.data();
  std::vector<T> y(static_cast<std::size_t>(nc));
  for (int64_t p = 0; p < nc; ++p) {
    double acc = 0;
    for (int64_t j = 0; j < hw; ++j) acc += xv[p * hw + j];
    y[p] = static_cast<T>(acc / static_cast<double>(hw));
  }
  return detail::record<T>("global_avg_pool", {x.dim(0), x.dim(1)}, std::move(y), {&x},
                           [nc, hw](Node<T>& self) {
                             T* g = detail::parent_grad(self, 0);
                             if (!g) return;
                             for (int64_t p = 0; p < nc; ++p) {
                               const T s = self.grad[p] / static_cast<T>(hw);
                               for (int64_t j = 0; j < hw; ++j) g[p * hw + j] += s;
                             }
                           });
}

template <class T>
BasicTensor<T> l2_normalize_rows(const BasicTensor<T>& x) {
  require_rank("l2_normalize_rows", x, 2);
  const int64_t n = x.dim(0), d = x.dim(1);
  const auto xv = x.data();
  std::vector<T> y(xv.size());
  std::vector<T> norms(static_cast<std::size_t>(n));
  for (int64_t r = 0; r < n; ++r) {
    double ss = 1e-12;
    for (int64_t j = 0; j < d; ++j) ss += double(xv[r * d + j]) * xv[r * d + j];
    norms[r] = static_cast<T>(std::sqrt(ss));
    for (int64_t j = 0; j < d; ++j) y[r * d + j] = xv[r * d + j] / norms[r];
  }
  return detail::record<T>("l2_normalize_rows", x.shape(), std::move(y), {&x},
                           [n, d, norms = std::move(norms)](Node<T>& self) {
                             T* g = detail::parent_grad(self, 0);
                             if (!g) return;
                             for (int64_t r = 0; r < n; ++r) {
                               T dot = 0;
                               for (int64_t j = 0; j < d; ++j) dot += self.value[r * d + j] * self.grad[r * d + j];
                               for (int64_t j = 0; j < d; ++j) {
                                 g[r * d + j] += (self.grad[r * d + j] - self.value[r * d + j] * dot) / norms[r];
                               }
                             }
                           });
}

template <class T>
BasicTensor<T> grid_sample_2d(const BasicTensor<T>& plane, const BasicTensor<T>& coords) {
  require_rank("grid_sample_2d", plane, 3);
  if (coords.rank() != 2 || coords.dim(1) != 2) {
    throw DimensionError("grid_sample_2d: coords must be [M,2], got " + to_string(coords.shape()));
  }
  const int64_t c = plane.dim(0), h = plane.dim(1), w = plane.dim(2), m = coords.dim(0);
  const auto pv = plane.data();
  const auto cv = coords.data();
  std::vector<T> y(static_cast<std::size_t>(m * c));
  parallel_chunks(m, 4096, [&](int64_t, int64_t b, int64_t e) {
    for (int64_t p = b; p < e; ++p) {
      const auto tx = kernels::bilinear_tap(cv[2 * p], w);
      const auto ty = kernels::bilinear_tap(cv[2 * p + 1], h);
      const T w00 = (1 - tx.frac) * (1 - ty.frac), w01 = tx.frac * (1 - ty.frac);
      const T w10 = (1 - tx.frac) * ty.frac, w11 = tx.frac * ty.frac;
      for (int64_t ch = 0; ch < c; ++ch) {
        const T* pl = pv.data() + ch * h * w;
        y[p * c + ch] = w00 * pl[ty.i0 * w + tx.i0] + w01 * pl[ty.i0 * w + tx.i1] +
                        w10 * pl[ty.i1 * w + tx.i0] + w11 * pl[ty.i1 * w + tx.i1];
      }
    }
  });
  return detail::record<T>(
      "grid_sample_2d", {m, c}, std::move(y), {&plane, &coords}, [c, h, w, m](Node<T>& self) {
        const auto& pv = self.parents[0]->value;
        const auto& cv = self.parents[1]->value;
        T* gp = detail::parent_grad(self, 0);
        T* gc = detail::parent_grad(self, 1);
        const int64_t chunk = 4096;
        const int64_t chunks = chunk_count(m, chunk);
        const std::size_t plane_size = static_cast<std::size_t>(c * h * w);
        std::vector<std::vector<T>> partial(gp ? static_cast<std::size_t>(chunks) : 0);
        parallel_chunks(m, chunk, [&](int64_t ci, int64_t b, int64_t e) {
          T* acc = nullptr;
          if (gp) {
            partial[ci].assign(plane_size, T(0));
            acc = partial[ci].data();
          }
          for (int64_t p = b; p < e; ++p) {
            const auto tx = kernels::bilinear_tap(cv[2 * p], w);
            const auto ty = kernels::bilinear_tap(cv[2 * p + 1], h);
            const T w00 = (1 - tx.frac) * (1 - ty.frac), w01 = tx.frac * (1 - ty.frac);
            const T w10 = (1 - tx.frac) * ty.frac, w11 = tx.frac * ty.frac;
            T dx = 0, dy = 0;
            for (int64_t ch = 0; ch < c; ++ch) {
              const T g = self.grad[p * c + ch];
              const int64_t base = ch * h * w;
              const T v00 = pv[base + ty.i0 * w + tx.i0], v01 = pv[base + ty.i0 * w + tx.i1];
              const T v10 = pv[base + ty.i1 * w + tx.i0], v11 = pv[base + ty.i1 * w + tx.i1];
              if (acc) {
                acc[base + ty.i0 * w + tx.i0] += g * w00;
                acc[base + ty.i0 * w + tx.i1] += g * w01;
                acc[base + ty.i1 * w + tx.i0] += g * w10;
                acc[base + ty.i1 * w + tx.i1] += g * w11;
              }
              dx += g * ((v01 - v00) * (1 - ty.frac) + (v11 - v10) * ty.frac);
              dy += g * ((v10 - v00) * (1 - tx.frac) + (v11 - v01) * tx.frac);
            }
            if (gc) {
              gc[2 * p] += dx * tx.dindex;
              gc[2 * p + 1] += dy * ty.dindex;
            }
          }
        });
        if (gp) {
          for (const auto& part : partial) {
            for (std::size_t i = 0; i < plane_size; ++i) gp[i] += part[i];
          }
        }
      });
}

#define TPN_INSTANTIATE_OPS(T)                                                                   \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                     \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                     \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                     \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                       \
  template BasicTensor<T> add_scalar(const BasicTensor<T>&, T);                                  \
  template BasicTensor<T> scale_by(const BasicTensor<T>&, const BasicTensor<T>&);                \
  template BasicTensor<T> square(const BasicTensor<T>&);                                         \
  template BasicTensor<T> exp(const BasicTensor<T>&);                                            \
  template BasicTensor<T> sigmoid(const BasicTensor<T>&);                                        \
  template BasicTensor<T> tanh(const BasicTensor<T>&);                                           \
  template BasicTensor<T> softplus(const BasicTensor<T>&);                                       \
  template BasicTensor<T> prelu(const BasicTensor<T>&, const BasicTensor<T>&);                   \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                            \
  template BasicTensor<T> mean(const BasicTensor<T>&);                                           \
  template BasicTensor<T> mse(const BasicTensor<T>&, const BasicTensor<T>&);                     \
  template BasicTensor<T> smooth_l1(const BasicTensor<T>&, const BasicTensor<T>&, T);            \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                  \
  template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> transpose(const BasicTensor<T>&);                                      \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                                 \
  template BasicTensor<T> slice(const BasicTensor<T>&, int, int64_t, int64_t);                   \
  template BasicTensor<T> concat(const std::vector<BasicTensor<T>>&, int);                       \
  template BasicTensor<T> repeat_rows(const BasicTensor<T>&, int64_t);                           \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, \
                                 int, Padding);                                                  \
  template BasicTensor<T> mul_channel(const BasicTensor<T>&, const BasicTensor<T>&);             \
  template BasicTensor<T> pixel_shuffle(const BasicTensor<T>&, int);                             \
  template BasicTensor<T> space_to_depth(const BasicTensor<T>&, int);                            \
  template BasicTensor<T> avg_pool2d(const BasicTensor<T>&, int);                                \
  template BasicTensor<T> global_avg_pool(const BasicTensor<T>&);                                \
  template BasicTensor<T> l2_normalize_rows(const BasicTensor<T>&);                              \
  template BasicTensor<T> grid_sample_2d(const BasicTensor<T>&, const BasicTensor<T>&);

TPN_INSTANTIATE_OPS(float)
TPN_INSTANTIATE_OPS(double)

}  // namespace tpn

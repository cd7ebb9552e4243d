#include "tpn/triplane.hpp"

#include "tpn/ops.hpp"
#include "tpn/parallel.hpp"

namespace tpn {

TriPlane::TriPlane(Tensor planes, double bound) : planes_(std::move(planes)), bound_(bound) {
  if (planes_.rank() != 4 || planes_.dim(0) != 3 || planes_.dim(2) != planes_.dim(3)) {
    throw DimensionError("TriPlane expects [3,C,P,P], got " + to_string(planes_.shape()));
  }
  if (!(bound > 0)) throw DimensionError("TriPlane bound must be positive");
}

TriPlane TriPlane::zeros(const TriPlaneConfig& cfg, bool requires_grad) {
  return TriPlane(Tensor::zeros({3, cfg.channels, cfg.resolution, cfg.resolution}, requires_grad),
                  cfg.bound);
}

Tensor TriPlane::plane(int index) const {
  return reshape(slice(planes_, 0, index, index + 1), {channels(), resolution(), resolution()});
}

namespace {
constexpr int64_t kPointChunk = 4096;
}

template <class T>
BasicTensor<T> sample_planes(const BasicTensor<T>& planes, const BasicTensor<T>& points, T bound) {
  if (planes.rank() != 4 || planes.dim(0) != 3 || planes.dim(2) != planes.dim(3)) {
    throw DimensionError("sample_planes: planes must be [3,C,P,P], got " + to_string(planes.shape()));
  }
  if (points.rank() != 2 || points.dim(1) != 3) {
    throw DimensionError("sample_planes: points must be [M,3], got " + to_string(points.shape()));
  }
  const int64_t c = planes.dim(1), p = planes.dim(2), m = points.dim(0);
  const std::size_t plane_hw = static_cast<std::size_t>(p * p);

  // Channel-last copy so the C features of one texel are contiguous.
  std::vector<T> tex(static_cast<std::size_t>(3 * c) * plane_hw);
  const auto pv = planes.data();
  for (int64_t k = 0; k < 3; ++k) {
    for (int64_t ch = 0; ch < c; ++ch) {
      for (std::size_t i = 0; i < plane_hw; ++i) {
        tex[(k * plane_hw + i) * c + ch] = pv[(k * c + ch) * plane_hw + i];
      }
    }
  }

  struct Taps {
    kernels::Tap<T> u, v;
  };
  auto taps_for = [p, bound](const T* pt, int k) {
    // Axis pairs xy, xz, yz.
    static constexpr int axes[3][2] = {{0, 1}, {0, 2}, {1, 2}};
    return Taps{kernels::bilinear_tap(pt[axes[k][0]] / bound, p),
                kernels::bilinear_tap(pt[axes[k][1]] / bound, p)};
  };

  const auto ptv = points.data();
  std::vector<T> y(static_cast<std::size_t>(m * c), T(0));
  parallel_chunks(m, kPointChunk, [&](int64_t, int64_t b, int64_t e) {
    for (int64_t i = b; i < e; ++i) {
      T* out = y.data() + i * c;
      for (int k = 0; k < 3; ++k) {
        const auto t = taps_for(ptv.data() + 3 * i, k);
        const T* base = tex.data() + k * plane_hw * c;
        const T w00 = (1 - t.u.frac) * (1 - t.v.frac), w01 = t.u.frac * (1 - t.v.frac);
        const T w10 = (1 - t.u.frac) * t.v.frac, w11 = t.u.frac * t.v.frac;
        const T* t00 = base + (t.v.i0 * p + t.u.i0) * c;
        const T* t01 = base + (t.v.i0 * p + t.u.i1) * c;
        const T* t10 = base + (t.v.i1 * p + t.u.i0) * c;
        const T* t11 = base + (t.v.i1 * p + t.u.i1) * c;
        for (int64_t ch = 0; ch < c; ++ch) {
          out[ch] += w00 * t00[ch] + w01 * t01[ch] + w10 * t10[ch] + w11 * t11[ch];
        }
      }
    }
  });

  return detail::record<T>(
      "sample_planes", {m, c}, std::move(y), {&planes, &points},
      [c, p, m, plane_hw, taps_for](Node<T>& self) {
        T* gp = detail::parent_grad(self, 0);
        if (!gp) return;
        const auto& ptv = self.parents[1]->value;
        const int64_t chunks = chunk_count(m, kPointChunk);
        const std::size_t tex_size = static_cast<std::size_t>(3 * c) * plane_hw;
        std::vector<std::vector<T>> partial(static_cast<std::size_t>(chunks));
        parallel_chunks(m, kPointChunk, [&](int64_t ci, int64_t b, int64_t e) {
          auto& acc = partial[static_cast<std::size_t>(ci)];
          acc.assign(tex_size, T(0));
          for (int64_t i = b; i < e; ++i) {
            const T* g = self.grad.data() + i * c;
            for (int k = 0; k < 3; ++k) {
              const auto t = taps_for(ptv.data() + 3 * i, k);
              T* base = acc.data() + k * plane_hw * c;
              const T w00 = (1 - t.u.frac) * (1 - t.v.frac), w01 = t.u.frac * (1 - t.v.frac);
              const T w10 = (1 - t.u.frac) * t.v.frac, w11 = t.u.frac * t.v.frac;
              T* t00 = base + (t.v.i0 * p + t.u.i0) * c;
              T* t01 = base + (t.v.i0 * p + t.u.i1) * c;
              T* t10 = base + (t.v.i1 * p + t.u.i0) * c;
              T* t11 = base + (t.v.i1 * p + t.u.i1) * c;
              for (int64_t ch = 0; ch < c; ++ch) {
                t00[ch] += w00 * g[ch];
                t01[ch] += w01 * g[ch];
                t10[ch] += w10 * g[ch];
                t11[ch] += w11 * g[ch];
              }
            }
          }
        });
        std::vector<T> total(tex_size, T(0));
        for (const auto& part : partial) {
          for (std::size_t i = 0; i < tex_size; ++i) total[i] += part[i];
        }
        for (int64_t k = 0; k < 3; ++k) {
          for (int64_t ch = 0; ch < c; ++ch) {
            for (std::size_t i = 0; i < plane_hw; ++i) {
              gp[(k * c + ch) * plane_hw + i] += total[(k * plane_hw + i) * c + ch];
            }
          }
        }
      });
}

template Tensor sample_planes(const Tensor&, const Tensor&, float);
template TensorD sample_planes(const TensorD&, const TensorD&, double);

Tensor sample_triplane(const TriPlane& tri, const Tensor& points) {
  return sample_planes(tri.planes(), points, static_cast<float>(tri.bound()));
}

TriPlane apply_offsets(const TriPlane& base, const TriPlane& offsets) {
  if (base.planes().shape() != offsets.planes().shape()) {
    throw DimensionError("apply_offsets: tri-plane shapes differ " + to_string(base.planes().shape()) +
                         " vs " + to_string(offsets.planes().shape()));
  }
  return TriPlane(add(base.planes(), offsets.planes()), base.bound());
}

}  // namespace tpn

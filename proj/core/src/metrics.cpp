#include "tpn/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace tpn {

double metric_mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw DimensionError("metric: image shapes differ");
  const auto av = a.data(), bv = b.data();
  double acc = 0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double r = double(av[i]) - double(bv[i]);
    acc += r * r;
  }
  return acc / static_cast<double>(av.size());
}

double metric_psnr(const Tensor& a, const Tensor& b) {
  const double m = metric_mse(a, b);
  if (m < 1e-10) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / m));
}

namespace {

using Plane = std::vector<double>;

constexpr int kWin = 7;

std::array<double, kWin> gaussian_window() {
  std::array<double, kWin> g{};
  double s = 0;
  for (int i = 0; i < kWin; ++i) {
    const double d = i - kWin / 2;
    g[i] = std::exp(-d * d / (2 * 1.5 * 1.5));
    s += g[i];
  }
  for (auto& v : g) v /= s;
  return g;
}

// Separable valid-mode filtering of an h x w plane.
Plane filter(const Plane& x, int h, int w) {
  static const auto g = gaussian_window();
  const int oh = h - kWin + 1, ow = w - kWin + 1;
  Plane tmp(static_cast<std::size_t>(h) * ow), out(static_cast<std::size_t>(oh) * ow);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < ow; ++j) {
      double s = 0;
      for (int k = 0; k < kWin; ++k) s += g[k] * x[static_cast<std::size_t>(i) * w + j + k];
      tmp[static_cast<std::size_t>(i) * ow + j] = s;
    }
  }
  for (int i = 0; i < oh; ++i) {
    for (int j = 0; j < ow; ++j) {
      double s = 0;
      for (int k = 0; k < kWin; ++k) s += g[k] * tmp[static_cast<std::size_t>(i + k) * ow + j];
      out[static_cast<std::size_t>(i) * ow + j] = s;
    }
  }
  return out;
}

Plane product(const Plane& a, const Plane& b) {
  Plane out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

// Mean contrast-structure term and mean SSIM of one scale.
std::pair<double, double> ssim_terms(const Plane& a, const Plane& b, int h, int w) {
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const Plane ma = filter(a, h, w), mb = filter(b, h, w);
  const Plane saa = filter(product(a, a), h, w), sbb = filter(product(b, b), h, w);
  const Plane sab = filter(product(a, b), h, w);
  double cs_sum = 0, ssim_sum = 0;
  for (std::size_t i = 0; i < ma.size(); ++i) {
    const double va = saa[i] - ma[i] * ma[i], vb = sbb[i] - mb[i] * mb[i];
    const double cov = sab[i] - ma[i] * mb[i];
    const double cs = (2 * cov + c2) / (va + vb + c2);
    const double lum = (2 * ma[i] * mb[i] + c1) / (ma[i] * ma[i] + mb[i] * mb[i] + c1);
    cs_sum += cs;
    ssim_sum += lum * cs;
  }
  const double n = static_cast<double>(ma.size());
  return {cs_sum / n, ssim_sum / n};
}

Plane downsample(const Plane& x, int h, int w) {
  Plane out(static_cast<std::size_t>(h / 2) * (w / 2));
  for (int i = 0; i < h / 2; ++i) {
    for (int j = 0; j < w / 2; ++j) {
      const auto at = [&](int y, int xx) { return x[static_cast<std::size_t>(y) * w + xx]; };
      out[static_cast<std::size_t>(i) * (w / 2) + j] =
          0.25 * (at(2 * i, 2 * j) + at(2 * i, 2 * j + 1) + at(2 * i + 1, 2 * j) + at(2 * i + 1, 2 * j + 1));
    }
  }
  return out;
}

}  // namespace

int ms_ssim_levels(int64_t h, int64_t w) {
  int levels = 0;
  while (levels < 3 && (std::min(h, w) >> levels) >= kWin) ++levels;
  return levels;
}

double metric_ms_ssim(const Tensor& a, const Tensor& b, int levels) {
  static constexpr double kWeights[] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  if (a.shape() != b.shape() || a.rank() != 3) throw DimensionError("metric_ms_ssim: expected equal [C,H,W] images");
  if (levels < 1 || levels > 5) throw UsageError("metric_ms_ssim: levels must be in [1, 5]");
  const int c = static_cast<int>(a.dim(0)), h0 = static_cast<int>(a.dim(1)), w0 = static_cast<int>(a.dim(2));
  if ((std::min(h0, w0) >> (levels - 1)) < kWin) {
    throw DimensionError("metric_ms_ssim: image too small for " + std::to_string(levels) + " scales");
  }
  double wsum = 0;
  for (int l = 0; l < levels; ++l) wsum += kWeights[l];
  double total = 0;
  for (int ch = 0; ch < c; ++ch) {
    const auto off = static_cast<std::size_t>(ch) * h0 * w0;
    Plane pa(a.data().begin() + off, a.data().begin() + off + static_cast<std::size_t>(h0) * w0);
    Plane pb(b.data().begin() + off, b.data().begin() + off + static_cast<std::size_t>(h0) * w0);
    int h = h0, w = w0;
    double value = 1;
    for (int l = 0; l < levels; ++l) {
      const auto [cs, ssim] = ssim_terms(pa, pb, h, w);
      const double term = l + 1 == levels ? ssim : cs;
      value *= std::pow(std::max(term, 0.0), kWeights[l] / wsum);
      if (l + 1 < levels) {
        pa = downsample(pa, h, w);
        pb = downsample(pb, h, w);
        h /= 2;
        w /= 2;
      }
    }
    total += value;
  }
  return total / c;
}

double metric_id(const Tensor& a, const Tensor& b, const IdentityProxy& proxy) {
  NoGradGuard no_grad;
  return 1.0 - loss_id(a, b, proxy).item();
}

std::vector<ViewMetrics> eval_novel_views(const std::function<Tensor(const Camera&)>& render_fn,
                                          const SceneSpec& scene, const Camera& input_camera,
                                          const std::vector<double>& yaw_offsets, const OracleConfig& oracle,
                                          const IdentityProxy& proxy) {
  NoGradGuard no_grad;
  std::vector<ViewMetrics> out;
  for (double off : yaw_offsets) {
    Camera cam = input_camera;
    cam.yaw += off;
    const Tensor img = render_fn(cam);
    const Tensor gt = render_scene_oracle(scene, cam, oracle);
    out.push_back({off, metric_mse(img, gt), metric_psnr(img, gt), metric_ms_ssim(img, gt, ms_ssim_levels(gt.dim(1), gt.dim(2))),
                   metric_id(img, gt, proxy)});
  }
  return out;
}

}  // namespace tpn

#pragma once

// Image quality metrics and the novel-view sweep.

#include <functional>
#include <vector>

#include "tpn/losses.hpp"
#include "tpn/renderer.hpp"
#include "tpn/scenes.hpp"
#include "tpn/tensor.hpp"

namespace tpn {

inline constexpr double kPsnrCap = 99.0;

// Images in [0, 1]; 10 log10(1 / MSE), capped at 99 dB when MSE < 1e-10.
double metric_psnr(const Tensor& a, const Tensor& b);
double metric_mse(const Tensor& a, const Tensor& b);
// Multi-scale SSIM on [C,H,W] images: 7x7 Gaussian window (sigma 1.5, valid
// region), 2x2 average pooling between scales, the first `levels` standard
// scale weights renormalized, averaged over channels.
double metric_ms_ssim(const Tensor& a, const Tensor& b, int levels = 3);
// Most scales (up to 3) an h x w image supports; 0 when even one does not fit.
int ms_ssim_levels(int64_t h, int64_t w);
// Identity proxy similarity <e(a), e(b)> = 1 - loss_id.
double metric_id(const Tensor& a, const Tensor& b, const IdentityProxy& proxy);

inline const std::vector<double>& default_yaw_offsets() {
  static const std::vector<double> v{-0.8, -0.6, -0.3, 0.3, 0.6, 0.8};
  return v;
}

struct ViewMetrics {
  double yaw_offset = 0;
  double l2 = 0;
  double psnr = 0;
  double ms_ssim = 0;
  double id = 0;
};

// Renders the inverted representation at input yaw + offset and compares it
// with the oracle render of the scene at the same pose.
std::vector<ViewMetrics> eval_novel_views(const std::function<Tensor(const Camera&)>& render_fn,
                                          const SceneSpec& scene, const Camera& input_camera,
                                          const std::vector<double>& yaw_offsets, const OracleConfig& oracle,
                                          const IdentityProxy& proxy);

}  // namespace tpn

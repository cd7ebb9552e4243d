#pragma once

// Rendering block: ray generation, tri-plane decoding, emission-absorption
// compositing and the learned 2x upsampler.

#include <cstdint>
#include <span>
#include <vector>

#include "tpn/nn.hpp"
#include "tpn/tensor.hpp"
#include "tpn/triplane.hpp"

namespace tpn {

// Look-at pinhole camera orbiting `look_at`; +y is up.
struct Camera {
  double yaw = 0;
  double pitch = 0;
  double radius = 2.7;
  double fov_y = 0.7;
  Vec3 look_at{};

  Vec3 position() const;
  Vec3 forward() const;
  void validate() const;
};

struct Ray {
  Vec3 origin;
  Vec3 direction;
  double t_near = 0;
  double t_far = 0;
};

// Row-major res x res grid, row 0 at the top of the image. The depth range
// brackets the cube [-bound, bound]^3 around look_at.
std::vector<Ray> generate_rays(const Camera& cam, int res, double bound);

struct RenderConfig {
  int n_samples = 48;
  int low_res = 32;
  int final_res = 64;
  double bound = 1.0;
  int mlp_hidden = 32;
  int feature_channels = 8;  // first 3 are RGB
  int sr_hidden = 16;

  void validate() const;
};

enum class Sampling { Midpoint, Stratified };

struct SampleSpec {
  Sampling mode = Sampling::Midpoint;
  uint64_t seed = 0;
};

// Sample points [rays*samples, 3] and interval lengths [rays, samples].
struct RaySamples {
  Tensor points;
  Tensor deltas;
  int64_t rays = 0;
  int64_t samples = 0;
};

RaySamples make_ray_samples(const Camera& cam, int res, int n_samples, double bound, SampleSpec spec = {});

template <class T>
struct CompositeResult {
  std::vector<T> color;
  std::vector<T> weights;
  T transmittance = T(1);
};

// alpha_i = 1 - exp(-sigma_i delta_i), T_i = prod_{j<i} (1 - alpha_j),
// weight_i = T_i alpha_i, color = sum_i weight_i c_i. colors is [n, channels].
template <class T>
CompositeResult<T> composite(std::span<const T> sigmas, std::span<const T> colors, int64_t channels,
                             std::span<const T> deltas);

// Batched, differentiable in sigmas and colors: sigmas [R,S], colors [R,S,C],
// deltas [R,S] -> [R,C].
template <class T>
BasicTensor<T> composite_rays(const BasicTensor<T>& sigmas, const BasicTensor<T>& colors,
                              const BasicTensor<T>& deltas);

struct DecoderMLP {
  Tensor w1, b1, a1, w2, b2, a2, w_out, b_out;

  static DecoderMLP init(int64_t in_channels, int64_t hidden, int64_t feature_channels, Rng& rng);
  int64_t feature_channels() const { return w_out.dim(1) - 1; }
  ParamList params(const std::string& prefix);
};

// Fused decoder: x [M,C] -> [M, 1+Cf]. Two prelu hidden layers, then
// softplus on column 0 (density), sigmoid on columns 1..3 (RGB) and identity
// on the rest. Same values as composing linear/prelu/softplus/sigmoid.
template <class T>
BasicTensor<T> decoder_mlp(const BasicTensor<T>& x, const BasicTensor<T>& w1, const BasicTensor<T>& b1,
                           const BasicTensor<T>& a1, const BasicTensor<T>& w2, const BasicTensor<T>& b2,
                           const BasicTensor<T>& a2, const BasicTensor<T>& w_out, const BasicTensor<T>& b_out);

// Density [M] (softplus) and features [M,Cf] (sigmoid on the RGB channels).
struct DecodedField {
  Tensor sigma;
  Tensor features;
};
DecodedField decode_features(const Tensor& features, const DecoderMLP& mlp);

// conv3x3 -> pixel_shuffle(2) -> prelu -> conv3x3 -> sigmoid.
struct SuperResolution {
  Tensor w1, b1, a1, w2, b2;

  static SuperResolution init(int64_t feature_channels, int64_t hidden, Rng& rng);
  ParamList params(const std::string& prefix);
};

struct RenderParams {
  DecoderMLP mlp;
  SuperResolution sr;

  static RenderParams init(const RenderConfig& cfg, int64_t plane_channels, Rng& rng);
  ParamList params(const std::string& prefix = "render");
  RenderParams clone() const;
};

// [Cf, low, low]; channels 0..2 are the raw RGB image.
Tensor render_feature_image(const TriPlane& tri, const DecoderMLP& mlp, const Camera& cam,
                            const RenderConfig& cfg, SampleSpec spec = {});

// [Cf, n, n] -> [3, 2n, 2n]
Tensor super_resolve(const Tensor& feature_image, const SuperResolution& sr);

struct RenderOutput {
  Tensor image;  // [3, final, final]
  Tensor raw;    // [3, low, low]
};

RenderOutput render(const TriPlane& tri, const RenderParams& params, const Camera& cam,
                    const RenderConfig& cfg, SampleSpec spec = {});

}  // namespace tpn

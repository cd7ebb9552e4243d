#pragma once

// Desk-scale tri-plane generator: a mapping network (z, pose) -> w in W+ and a
// style-modulated convolutional synthesis network w -> TriPlane.

#include <cstdint>
#include <string>
#include <vector>

#include "tpn/nn.hpp"
#include "tpn/renderer.hpp"
#include "tpn/triplane.hpp"

namespace tpn {

struct GeneratorConfig {
  int64_t z_dim = 16;
  int64_t w_rows = 6;  // K
  int64_t w_dim = 32;  // D
  int64_t map_hidden = 64;
  int64_t channels = 32;
  TriPlaneConfig planes;

  // Number of 2x upsampling layers taking the 4x4 constant to planes.resolution.
  int upsample_layers() const;
  void validate() const;
};

struct MappingNetwork {
  Tensor w1, b1, a1, w2, b2;
  ParamList params(const std::string& prefix);
};

// One synthesis layer: per-channel gains from an affine map of its w row,
// then a convolution. Up layers finish with pixel_shuffle(2).
struct StyleLayer {
  enum class Kind { Same, Up, Output };
  Kind kind = Kind::Same;
  Tensor style_w, style_b, conv_w, conv_b, alpha;
  ParamList params(const std::string& prefix);
};

struct GeneratorParams {
  GeneratorConfig cfg;
  MappingNetwork mapping;
  Tensor const_input;  // [1, channels, 4, 4]
  std::vector<StyleLayer> layers;

  static GeneratorParams init(const GeneratorConfig& cfg, Rng& rng);
  ParamList params(const std::string& prefix = "gen");
  ParamList synthesis_params(const std::string& prefix = "gen");
  GeneratorParams clone() const;
};

// Mapping output broadcast to K rows, shape [K, D]. z is [1, z_dim].
Tensor map_latent_raw(const Tensor& z, const Camera& cam, const GeneratorParams& params);

// w = w_bar + psi * (w_raw - w_bar); psi = 1 returns w_raw and psi = 0 returns w_bar.
Tensor map_latent(const Tensor& z, const Camera& cam, double psi, const Tensor& w_bar,
                  const GeneratorParams& params);

// Row i of w modulates synthesis layer i.
TriPlane synthesize_triplanes(const Tensor& w, const GeneratorParams& params);

// Mean of n untruncated latents over z ~ N(0, I) and poses from the dataset pose range.
Tensor estimate_w_bar(const GeneratorParams& params, int n, uint64_t seed);

// Trained generator plus rendering block and auto-decoder latent table.
struct GeneratorState {
  GeneratorParams gen;
  RenderParams render;
  RenderConfig render_cfg;
  Tensor w_bar;    // [K, D]
  Tensor latents;  // [n_latents, z_dim]

  static GeneratorState init(const GeneratorConfig& gcfg, const RenderConfig& rcfg, int64_t n_latents,
                             uint64_t seed);
  ParamList params();
  GeneratorState clone() const;
  RenderOutput render_latent(const Tensor& w, const Camera& cam, SampleSpec spec = {}) const;
};

}  // namespace tpn

#pragma once

#include <doctest.h>

#include <bit>
#include <cmath>
#include <random>
#include <vector>

#include "tpn/encoders.hpp"
#include "tpn/generator.hpp"
#include "tpn/gradcheck.hpp"
#include "tpn/tensor.hpp"

namespace tpn::test {

inline Tensor rand_tensor(Shape shape, uint64_t seed, double lo = -1.0, double hi = 1.0, bool grad = false) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(static_cast<float>(lo), static_cast<float>(hi));
  std::vector<float> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = u(rng);
  return Tensor::from(std::move(shape), std::move(v), grad);
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

inline bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::equal(a.data().begin(), a.data().end(), b.data().begin(),
                    [](float x, float y) { return std::bit_cast<uint32_t>(x) == std::bit_cast<uint32_t>(y); });
}

// Small enough that a render takes well under a millisecond.
inline GeneratorConfig tiny_generator() {
  GeneratorConfig g;
  g.z_dim = 4;
  g.w_rows = 4;
  g.w_dim = 8;
  g.map_hidden = 16;
  g.channels = 8;
  g.planes = {2, 8, 1.0};
  return g;
}

inline RenderConfig tiny_render_config() {
  RenderConfig r;
  r.n_samples = 8;
  r.low_res = 8;
  r.final_res = 16;
  r.mlp_hidden = 8;
  r.feature_channels = 4;
  r.sr_hidden = 4;
  return r;
}

inline EncoderConfig tiny_encoder() {
  EncoderConfig e;
  e.image_res = 16;
  e.stages = {4, 6, 8};
  e.head_channels = 8;
  return e;
}

inline GeneratorState tiny_state(uint64_t seed = 1, int64_t latents = 4) {
  return GeneratorState::init(tiny_generator(), tiny_render_config(), latents, seed);
}

}  // namespace tpn::test

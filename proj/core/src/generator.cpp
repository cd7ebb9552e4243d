#include "tpn/generator.hpp"

#include <cmath>

#include "tpn/ops.hpp"
#include "tpn/scenes.hpp"

namespace tpn {

int GeneratorConfig::upsample_layers() const {
  int n = 0;
  for (int64_t r = 4; r < planes.resolution; r *= 2) ++n;
  return n;
}

void GeneratorConfig::validate() const {
  if ((int64_t{4} << upsample_layers()) != planes.resolution) {
    throw DimensionError("generator: plane resolution must be 4 * 2^k, got " +
                         std::to_string(planes.resolution));
  }
  if (w_rows < upsample_layers() + 2) {
    throw DimensionError("generator: need at least " + std::to_string(upsample_layers() + 2) +
                         " latent rows for resolution " + std::to_string(planes.resolution));
  }
  if (z_dim < 1 || w_dim < 1 || channels < 1 || planes.channels < 1) {
    throw DimensionError("generator: dimensions must be positive");
  }
}

ParamList MappingNetwork::params(const std::string& prefix) {
  return {{prefix + ".w1", &w1}, {prefix + ".b1", &b1}, {prefix + ".a1", &a1},
          {prefix + ".w2", &w2}, {prefix + ".b2", &b2}};
}

ParamList StyleLayer::params(const std::string& prefix) {
  ParamList out{{prefix + ".style_w", &style_w}, {prefix + ".style_b", &style_b},
                {prefix + ".conv_w", &conv_w}, {prefix + ".conv_b", &conv_b}};
  if (kind != Kind::Output) out.push_back({prefix + ".alpha", &alpha});
  return out;
}

GeneratorParams GeneratorParams::init(const GeneratorConfig& cfg, Rng& rng) {
  cfg.validate();
  GeneratorParams p;
  p.cfg = cfg;
  const int64_t in = cfg.z_dim + 2;
  p.mapping.w1 = init_normal({in, cfg.map_hidden}, static_cast<double>(in), rng);
  p.mapping.b1 = init_constant({cfg.map_hidden}, 0.0f);
  p.mapping.a1 = init_constant({cfg.map_hidden}, 0.25f);
  p.mapping.w2 = init_normal({cfg.map_hidden, cfg.w_dim}, static_cast<double>(cfg.map_hidden), rng, 1.0);
  p.mapping.b2 = init_constant({cfg.w_dim}, 0.0f);
  p.const_input = init_normal({1, cfg.channels, 4, 4}, 1.0, rng, 1.0);

  const int64_t c = cfg.channels;
  const int n_up = cfg.upsample_layers();
  for (int64_t i = 0; i < cfg.w_rows; ++i) {
    StyleLayer l;
    if (i == cfg.w_rows - 1) {
      l.kind = StyleLayer::Kind::Output;
    } else if (i >= 1 && i <= n_up) {
      l.kind = StyleLayer::Kind::Up;
    }
    l.style_w = init_normal({cfg.w_dim, c}, static_cast<double>(cfg.w_dim), rng, 0.5);
    l.style_b = init_constant({c}, 1.0f);
    switch (l.kind) {
      case StyleLayer::Kind::Same:
        l.conv_w = init_normal({c, c, 3, 3}, static_cast<double>(9 * c), rng);
        l.conv_b = init_constant({c}, 0.0f);
        break;
      case StyleLayer::Kind::Up:
        l.conv_w = init_normal({4 * c, c, 3, 3}, static_cast<double>(9 * c), rng);
        l.conv_b = init_constant({4 * c}, 0.0f);
        break;
      case StyleLayer::Kind::Output:
        l.conv_w = init_normal({3 * cfg.planes.channels, c, 1, 1}, static_cast<double>(c), rng, 1.0);
        l.conv_b = init_constant({3 * cfg.planes.channels}, 0.0f);
        break;
    }
    if (l.kind != StyleLayer::Kind::Output) l.alpha = init_constant({c}, 0.25f);
    p.layers.push_back(std::move(l));
  }
  return p;
}

ParamList GeneratorParams::synthesis_params(const std::string& prefix) {
  ParamList out{{prefix + ".const", &const_input}};
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto lp = layers[i].params(prefix + ".layer" + std::to_string(i));
    out.insert(out.end(), lp.begin(), lp.end());
  }
  return out;
}

ParamList GeneratorParams::params(const std::string& prefix) {
  return concat_params({mapping.params(prefix + ".map"), synthesis_params(prefix)});
}

GeneratorParams GeneratorParams::clone() const {
  GeneratorParams out = *this;
  for (auto& p : out.params()) *p.tensor = p.tensor->clone();
  return out;
}

Tensor map_latent_raw(const Tensor& z, const Camera& cam, const GeneratorParams& params) {
  const auto& cfg = params.cfg;
  if (z.rank() != 2 || z.dim(0) != 1 || z.dim(1) != cfg.z_dim) {
    throw DimensionError("map_latent: z must be [1," + std::to_string(cfg.z_dim) + "], got " +
                         to_string(z.shape()));
  }
  auto pose = Tensor::from({1, 2}, {static_cast<float>(cam.yaw), static_cast<float>(cam.pitch)});
  auto in = concat<float>({z, pose}, 1);
  const auto& m = params.mapping;
  auto h = prelu(linear(in, m.w1, m.b1), m.a1);
  return repeat_rows(linear(h, m.w2, m.b2), cfg.w_rows);
}

Tensor map_latent(const Tensor& z, const Camera& cam, double psi, const Tensor& w_bar,
                  const GeneratorParams& params) {
  if (psi < 0 || psi > 1) throw UsageError("map_latent: truncation must lie in [0, 1]");
  auto raw = map_latent_raw(z, cam, params);
  if (w_bar.shape() != raw.shape()) {
    throw DimensionError("map_latent: w_bar " + to_string(w_bar.shape()) + " vs " + to_string(raw.shape()));
  }
  if (psi == 1.0) return raw;
  if (psi == 0.0) return w_bar;
  return add(w_bar, scale(sub(raw, w_bar), static_cast<float>(psi)));
}

TriPlane synthesize_triplanes(const Tensor& w, const GeneratorParams& params) {
  const auto& cfg = params.cfg;
  if (w.rank() != 2 || w.dim(0) != cfg.w_rows || w.dim(1) != cfg.w_dim ||
      static_cast<int64_t>(params.layers.size()) != cfg.w_rows) {
    throw DimensionError("synthesize_triplanes: latent " + to_string(w.shape()) + " does not match [" +
                         std::to_string(cfg.w_rows) + "," + std::to_string(cfg.w_dim) + "]");
  }
  Tensor x = params.const_input;
  for (int64_t i = 0; i < cfg.w_rows; ++i) {
    const auto& l = params.layers[static_cast<std::size_t>(i)];
    auto gain = linear(slice(w, 0, i, i + 1), l.style_w, l.style_b);
    x = mul_channel(x, gain);
    switch (l.kind) {
      case StyleLayer::Kind::Same:
        x = prelu(conv2d(x, l.conv_w, l.conv_b, 1, Padding::Zero), l.alpha);
        break;
      case StyleLayer::Kind::Up:
        x = prelu(pixel_shuffle(conv2d(x, l.conv_w, l.conv_b, 1, Padding::Zero), 2), l.alpha);
        break;
      case StyleLayer::Kind::Output:
        x = conv2d(x, l.conv_w, l.conv_b, 1, Padding::Valid);
        break;
    }
  }
  const int64_t pc = cfg.planes.channels, res = cfg.planes.resolution;
  return TriPlane(reshape(x, {3, pc, res, res}), cfg.planes.bound);
}

Tensor estimate_w_bar(const GeneratorParams& params, int n, uint64_t seed) {
  if (n < 1) throw UsageError("estimate_w_bar: need at least one sample");
  NoGradGuard no_grad;
  Rng rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  const auto& cfg = params.cfg;
  std::vector<double> acc(static_cast<std::size_t>(cfg.w_rows * cfg.w_dim), 0.0);
  for (int s = 0; s < n; ++s) {
    std::vector<float> z(static_cast<std::size_t>(cfg.z_dim));
    for (auto& v : z) v = static_cast<float>(nd(rng));
    const Camera cam = sample_pose(rng, PoseRange{});
    auto w = map_latent_raw(Tensor::from({1, cfg.z_dim}, std::move(z)), cam, params);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += w.data()[i];
  }
  std::vector<float> mean(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) mean[i] = static_cast<float>(acc[i] / n);
  return Tensor::from({cfg.w_rows, cfg.w_dim}, std::move(mean));
}

GeneratorState GeneratorState::init(const GeneratorConfig& gcfg, const RenderConfig& rcfg,
                                    int64_t n_latents, uint64_t seed) {
  rcfg.validate();
  Rng rng(seed);
  GeneratorState s;
  s.gen = GeneratorParams::init(gcfg, rng);
  s.render = RenderParams::init(rcfg, gcfg.planes.channels, rng);
  s.render_cfg = rcfg;
  s.render_cfg.bound = gcfg.planes.bound;
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<float> z(static_cast<std::size_t>(std::max<int64_t>(n_latents, 1) * gcfg.z_dim));
  for (auto& v : z) v = static_cast<float>(nd(rng));
  s.latents = Tensor::from({std::max<int64_t>(n_latents, 1), gcfg.z_dim}, std::move(z), true);
  s.w_bar = estimate_w_bar(s.gen, 256, seed ^ 0x5eedULL);
  return s;
}

ParamList GeneratorState::params() {
  return concat_params({gen.params("gen"), render.params("render")});
}

GeneratorState GeneratorState::clone() const {
  GeneratorState out = *this;
  out.gen = gen.clone();
  out.render = render.clone();
  out.w_bar = w_bar.clone();
  out.latents = latents.clone();
  return out;
}

RenderOutput GeneratorState::render_latent(const Tensor& w, const Camera& cam, SampleSpec spec) const {
  return tpn::render(synthesize_triplanes(w, gen), render, cam, render_cfg, spec);
}

}  // namespace tpn

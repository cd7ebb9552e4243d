#include "tpn/encoders.hpp"

#include "tpn/ops.hpp"

namespace tpn {

ConvPrelu ConvPrelu::init(int64_t in, int64_t out, int stride, Rng& rng) {
  ConvPrelu c;
  c.w = init_normal({out, in, 3, 3}, static_cast<double>(9 * in), rng);
  c.b = init_constant({out}, 0.0f);
  c.alpha = init_constant({out}, 0.25f);
  c.stride = stride;
  return c;
}

Tensor ConvPrelu::operator()(const Tensor& x) const { return prelu(conv2d(x, w, b, stride, Padding::Zero), alpha); }

ParamList ConvPrelu::params(const std::string& prefix) {
  return {{prefix + ".w", &w}, {prefix + ".b", &b}, {prefix + ".alpha", &alpha}};
}

namespace {

Tensor image_batch(const Tensor& x, int64_t res, const char* who) {
  if (x.rank() != 3 || x.dim(0) != 3 || x.dim(1) != res || x.dim(2) != res) {
    throw DimensionError(std::string(who) + ": expected image [3," + std::to_string(res) + "," +
                         std::to_string(res) + "], got " + to_string(x.shape()));
  }
  return reshape(x, {1, 3, res, res});
}

template <class Net>
Net clone_net(const Net& net) {
  Net out = net;
  for (auto& p : out.params()) *p.tensor = p.tensor->clone();
  return out;
}

}  // namespace

LatentEncoder LatentEncoder::init(const EncoderConfig& cfg, int64_t w_rows, int64_t w_dim, Rng& rng) {
  LatentEncoder e;
  e.cfg = cfg;
  e.w_rows = w_rows;
  e.w_dim = w_dim;
  int64_t in = 3;
  for (int64_t ch : cfg.stages) {
    e.backbone.push_back(ConvPrelu::init(in, ch, 2, rng));
    e.backbone.push_back(ConvPrelu::init(ch, ch, 1, rng));
    in = ch;
  }
  for (int64_t k = 0; k < w_rows; ++k) {
    e.head_convs.push_back(ConvPrelu::init(in, cfg.head_channels, 1, rng));
    // Small output scale: predictions start close to w_bar.
    e.head_w.push_back(init_normal({cfg.head_channels, w_dim}, static_cast<double>(cfg.head_channels), rng, 0.1));
    e.head_b.push_back(init_constant({w_dim}, 0.0f));
  }
  return e;
}

ParamList LatentEncoder::params(const std::string& prefix) {
  ParamList out;
  for (std::size_t i = 0; i < backbone.size(); ++i) {
    auto p = backbone[i].params(prefix + ".backbone" + std::to_string(i));
    out.insert(out.end(), p.begin(), p.end());
  }
  for (std::size_t k = 0; k < head_convs.size(); ++k) {
    const std::string h = prefix + ".head" + std::to_string(k);
    auto p = head_convs[k].params(h + ".conv");
    out.insert(out.end(), p.begin(), p.end());
    out.push_back({h + ".w", &head_w[k]});
    out.push_back({h + ".b", &head_b[k]});
  }
  return out;
}

LatentEncoder LatentEncoder::clone() const { return clone_net(*this); }

OffsetNet OffsetNet::init(const EncoderConfig& cfg, const TriPlaneConfig& planes, Rng& rng) {
  OffsetNet n;
  n.cfg = cfg;
  n.planes = planes;
  const auto& st = cfg.stages;
  int64_t in = 6;
  for (int64_t ch : st) {
    n.down.push_back(ConvPrelu::init(in, ch, 2, rng));
    n.down.push_back(ConvPrelu::init(ch, ch, 1, rng));
    in = ch;
  }
  n.bottleneck = ConvPrelu::init(st.back(), st.back(), 1, rng);
  // Decoder stage s brings resolution from stage s+1 up to stage s, for
  // s = n-2 .. 0; its input is concat(previous, skip of stage s+1).
  int64_t prev = st.back();
  for (std::size_t s = st.size() - 1; s-- > 0;) {
    const int64_t skip = st[s + 1], out = st[s];
    n.up_w.push_back(init_normal({4 * out, prev + skip, 3, 3}, static_cast<double>(9 * (prev + skip)), rng));
    n.up_b.push_back(init_constant({4 * out}, 0.0f));
    n.up_alpha.push_back(init_constant({out}, 0.25f));
    n.dec.push_back(ConvPrelu::init(2 * out, out, 1, rng));
    n.dec.push_back(ConvPrelu::init(out, out, 1, rng));
    prev = out;
  }
  n.out_w = init_constant({3 * planes.channels, st.front(), 1, 1}, 0.0f);
  n.out_b = init_constant({3 * planes.channels}, 0.0f);
  return n;
}

ParamList OffsetNet::params(const std::string& prefix) {
  ParamList out;
  auto add = [&](ParamList p) { out.insert(out.end(), p.begin(), p.end()); };
  for (std::size_t i = 0; i < down.size(); ++i) add(down[i].params(prefix + ".down" + std::to_string(i)));
  add(bottleneck.params(prefix + ".bottleneck"));
  for (std::size_t i = 0; i < up_w.size(); ++i) {
    const std::string u = prefix + ".up" + std::to_string(i);
    out.push_back({u + ".w", &up_w[i]});
    out.push_back({u + ".b", &up_b[i]});
    out.push_back({u + ".alpha", &up_alpha[i]});
  }
  for (std::size_t i = 0; i < dec.size(); ++i) add(dec[i].params(prefix + ".dec" + std::to_string(i)));
  out.push_back({prefix + ".out.w", &out_w});
  out.push_back({prefix + ".out.b", &out_b});
  return out;
}

OffsetNet OffsetNet::clone() const { return clone_net(*this); }

Tensor encode_latent(const Tensor& x, const LatentEncoder& phi, const Tensor& w_bar) {
  if (w_bar.rank() != 2 || w_bar.dim(0) != phi.w_rows || w_bar.dim(1) != phi.w_dim) {
    throw DimensionError("encode_latent: w_bar " + to_string(w_bar.shape()) + " does not match encoder output");
  }
  Tensor h = add_scalar(scale(image_batch(x, phi.cfg.image_res, "encode_latent"), 2.0f), -1.0f);
  for (const auto& layer : phi.backbone) h = layer(h);
  std::vector<Tensor> rows;
  for (std::size_t k = 0; k < phi.head_convs.size(); ++k) {
    rows.push_back(linear(global_avg_pool(phi.head_convs[k](h)), phi.head_w[k], phi.head_b[k]));
  }
  return add(concat(rows, 0), w_bar);
}

TriPlane predict_offsets(const Tensor& y_hat, const Tensor& x, const OffsetNet& psi) {
  if (y_hat.shape() != x.shape()) throw DimensionError("predict_offsets: image shapes differ");
  const int64_t res = psi.cfg.image_res;
  auto yb = image_batch(y_hat, res, "predict_offsets");
  auto rb = image_batch(sub(x, y_hat), res, "predict_offsets");
  Tensor h = concat<float>({yb, rb}, 1);
  std::vector<Tensor> skips;
  for (std::size_t i = 0; i < psi.down.size(); i += 2) {
    h = psi.down[i + 1](psi.down[i](h));
    skips.push_back(h);
  }
  h = psi.bottleneck(h);
  for (std::size_t s = 0; s < psi.up_w.size(); ++s) {
    const std::size_t skip = skips.size() - 1 - s;
    h = concat<float>({h, skips[skip]}, 1);
    h = prelu(pixel_shuffle(conv2d(h, psi.up_w[s], psi.up_b[s], 1, Padding::Zero), 2), psi.up_alpha[s]);
    h = concat<float>({h, skips[skip - 1]}, 1);
    h = psi.dec[2 * s + 1](psi.dec[2 * s](h));
  }
  auto out = conv2d(h, psi.out_w, psi.out_b, 1, Padding::Valid);
  const int64_t p = psi.planes.resolution, c = psi.planes.channels;
  if (out.dim(2) != p || out.dim(3) != p) {
    throw DimensionError("predict_offsets: network output " + to_string(out.shape()) + " does not match planes");
  }
  return TriPlane(reshape(out, {3, c, p, p}), psi.planes.bound);
}

InversionResult invert_forward(const Tensor& x, const Camera& cam, const LatentEncoder& phi, const OffsetNet& psi,
                               const GeneratorState& state, SampleSpec spec) {
  InversionResult r;
  r.w_hat = encode_latent(x, phi, state.w_bar);
  r.base = synthesize_triplanes(r.w_hat, state.gen);
  r.y_initial = render(r.base, state.render, cam, state.render_cfg, spec).image;
  r.delta = predict_offsets(r.y_initial, x, psi);
  r.y_final = render(apply_offsets(r.base, r.delta), state.render, cam, state.render_cfg, spec).image;
  return r;
}

void cttr_refine(const Tensor& x, const Camera& cam, InversionResult& result, const OffsetNet& psi,
                 const GeneratorState& state, int n_rounds, SampleSpec spec) {
  if (n_rounds < 0) throw UsageError("cttr_refine: n_rounds must be non-negative");
  const GeneratorState& g = result.tuned ? *result.tuned : state;
  for (int r = 0; r < n_rounds; ++r) {
    const Tensor y_prev = result.y_final;
    result.delta = predict_offsets(y_prev, x, psi);
    result.y_final = render(apply_offsets(result.base, result.delta), g.render, cam, g.render_cfg, spec).image;
    result.refinements.push_back(result.y_final);
  }
}

}  // namespace tpn

#include "tpn/renderer.hpp"

#include <Eigen/Core>
#include <array>
#include <cmath>
#include <random>

#include "tpn/ops.hpp"
#include "tpn/parallel.hpp"

namespace tpn {

Vec3 Camera::position() const {
  const Vec3 offset{std::sin(yaw) * std::cos(pitch), std::sin(pitch), std::cos(yaw) * std::cos(pitch)};
  return look_at + radius * offset;
}

Vec3 Camera::forward() const { return normalized(look_at - position()); }

void Camera::validate() const {
  if (!(radius > 0)) throw ContractError("camera radius must be positive");
  if (!(std::abs(pitch) < M_PI / 2)) throw ContractError("camera pitch must be within (-pi/2, pi/2)");
  if (!(fov_y > 0 && fov_y < M_PI)) throw ContractError("camera fov must be within (0, pi)");
}

std::vector<Ray> generate_rays(const Camera& cam, int res, double bound) {
  cam.validate();
  if (res < 1) throw DimensionError("generate_rays: resolution must be positive");
  const Vec3 origin = cam.position();
  const Vec3 fwd = cam.forward();
  const Vec3 right = normalized(cross(fwd, Vec3{0, 1, 0}));
  const Vec3 up = cross(right, fwd);
  const double half = std::tan(cam.fov_y / 2);
  const double reach = bound * std::sqrt(3.0);
  std::vector<Ray> rays(static_cast<std::size_t>(res) * res);
  for (int i = 0; i < res; ++i) {
    const double v = -((i + 0.5) / res * 2 - 1) * half;
    for (int j = 0; j < res; ++j) {
      const double u = ((j + 0.5) / res * 2 - 1) * half;
      Ray& r = rays[static_cast<std::size_t>(i) * res + j];
      r.origin = origin;
      r.direction = normalized(fwd + u * right + v * up);
      r.t_near = cam.radius - reach;
      r.t_far = cam.radius + reach;
    }
  }
  return rays;
}

void RenderConfig::validate() const {
  if (n_samples < 2) throw UsageError("render config: n_samples must be >= 2");
  if (final_res != 2 * low_res) throw UsageError("render config: final_res must equal 2 * low_res");
  if (feature_channels < 3) throw UsageError("render config: need at least 3 feature channels");
  if (!(bound > 0)) throw UsageError("render config: bound must be positive");
}

RaySamples make_ray_samples(const Camera& cam, int res, int n_samples, double bound, SampleSpec spec) {
  const auto rays = generate_rays(cam, res, bound);
  const int64_t r = static_cast<int64_t>(rays.size()), s = n_samples;
  std::vector<float> pts(static_cast<std::size_t>(r * s * 3));
  std::vector<float> deltas(static_cast<std::size_t>(r * s));
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int64_t k = 0; k < r; ++k) {
    const Ray& ray = rays[static_cast<std::size_t>(k)];
    const double step = (ray.t_far - ray.t_near) / static_cast<double>(s);
    for (int64_t i = 0; i < s; ++i) {
      const double jitter = spec.mode == Sampling::Stratified ? unit(rng) : 0.5;
      const double t = ray.t_near + (static_cast<double>(i) + jitter) * step;
      const Vec3 p = ray.origin + t * ray.direction;
      float* dst = pts.data() + (k * s + i) * 3;
      dst[0] = static_cast<float>(p.x);
      dst[1] = static_cast<float>(p.y);
      dst[2] = static_cast<float>(p.z);
      deltas[static_cast<std::size_t>(k * s + i)] = static_cast<float>(step);
    }
  }
  RaySamples out;
  out.points = Tensor::from({r * s, 3}, std::move(pts));
  out.deltas = Tensor::from({r, s}, std::move(deltas));
  out.rays = r;
  out.samples = s;
  return out;
}

template <class T>
CompositeResult<T> composite(std::span<const T> sigmas, std::span<const T> colors, int64_t channels,
                             std::span<const T> deltas) {
  const std::size_t n = sigmas.size();
  if (deltas.size() != n || colors.size() != n * static_cast<std::size_t>(channels)) {
    throw DimensionError("composite: inconsistent sample counts");
  }
  CompositeResult<T> out;
  out.color.assign(static_cast<std::size_t>(channels), T(0));
  out.weights.resize(n);
  T trans = T(1);
  for (std::size_t i = 0; i < n; ++i) {
    if (sigmas[i] < T(0)) throw ContractError("composite: negative density");
    if (!(deltas[i] > T(0))) throw ContractError("composite: non-positive interval");
    const T keep = std::exp(-sigmas[i] * deltas[i]);
    const T w = trans * (T(1) - keep);
    out.weights[i] = w;
    for (int64_t c = 0; c < channels; ++c) out.color[c] += w * colors[i * channels + c];
    trans *= keep;
  }
  out.transmittance = trans;
  return out;
}

template <class T>
BasicTensor<T> composite_rays(const BasicTensor<T>& sigmas, const BasicTensor<T>& colors,
                              const BasicTensor<T>& deltas) {
  if (sigmas.rank() != 2 || colors.rank() != 3 || deltas.shape() != sigmas.shape() ||
      colors.dim(0) != sigmas.dim(0) || colors.dim(1) != sigmas.dim(1)) {
    throw DimensionError("composite_rays: expected sigmas [R,S], colors [R,S,C], deltas [R,S]");
  }
  const int64_t r = sigmas.dim(0), s = sigmas.dim(1), c = colors.dim(2);
  const auto sv = sigmas.data();
  const auto cv = colors.data();
  const auto dv = deltas.data();
  for (T v : sv) {
    if (v < T(0)) throw ContractError("composite_rays: negative density");
  }
  std::vector<T> y(static_cast<std::size_t>(r * c), T(0));
  parallel_chunks(r, 256, [&](int64_t, int64_t b, int64_t e) {
    for (int64_t k = b; k < e; ++k) {
      T trans = T(1);
      T* out = y.data() + k * c;
      for (int64_t i = 0; i < s; ++i) {
        const T keep = std::exp(-sv[k * s + i] * dv[k * s + i]);
        const T w = trans * (T(1) - keep);
        const T* col = cv.data() + (k * s + i) * c;
        for (int64_t ch = 0; ch < c; ++ch) out[ch] += w * col[ch];
        trans *= keep;
      }
    }
  });
  return detail::record<T>(
      "composite_rays", {r, c}, std::move(y), {&sigmas, &colors, &deltas}, [r, s, c](Node<T>& self) {
        T* gs = detail::parent_grad(self, 0);
        T* gc = detail::parent_grad(self, 1);
        const auto& sv = self.parents[0]->value;
        const auto& cv = self.parents[1]->value;
        const auto& dv = self.parents[2]->value;
        parallel_chunks(r, 256, [&](int64_t, int64_t b, int64_t e) {
          std::vector<T> weights(static_cast<std::size_t>(s)), next_trans(static_cast<std::size_t>(s));
          for (int64_t k = b; k < e; ++k) {
            const T* g = self.grad.data() + k * c;
            T trans = T(1);
            for (int64_t i = 0; i < s; ++i) {
              const T keep = std::exp(-sv[k * s + i] * dv[k * s + i]);
              weights[i] = trans * (T(1) - keep);
              trans *= keep;
              next_trans[i] = trans;
            }
            // suffix = sum_{i>j} w_i <g, c_i>
            T suffix = T(0);
            for (int64_t i = s - 1; i >= 0; --i) {
              const T* col = cv.data() + (k * s + i) * c;
              T gdotc = T(0);
              for (int64_t ch = 0; ch < c; ++ch) gdotc += g[ch] * col[ch];
              if (gc) {
                T* dst = gc + (k * s + i) * c;
                for (int64_t ch = 0; ch < c; ++ch) dst[ch] += weights[i] * g[ch];
              }
              if (gs) gs[k * s + i] += dv[k * s + i] * (next_trans[i] * gdotc - suffix);
              suffix += weights[i] * gdotc;
            }
          }
        });
      });
}

template CompositeResult<float> composite(std::span<const float>, std::span<const float>, int64_t,
                                          std::span<const float>);
template CompositeResult<double> composite(std::span<const double>, std::span<const double>, int64_t,
                                           std::span<const double>);
template Tensor composite_rays(const Tensor&, const Tensor&, const Tensor&);
template TensorD composite_rays(const TensorD&, const TensorD&, const TensorD&);

DecoderMLP DecoderMLP::init(int64_t in_channels, int64_t hidden, int64_t feature_channels, Rng& rng) {
  DecoderMLP m;
  m.w1 = init_normal({in_channels, hidden}, static_cast<double>(in_channels), rng);
  m.b1 = init_constant({hidden}, 0.0f);
  m.a1 = init_constant({hidden}, 0.25f);
  m.w2 = init_normal({hidden, hidden}, static_cast<double>(hidden), rng);
  m.b2 = init_constant({hidden}, 0.0f);
  m.a2 = init_constant({hidden}, 0.25f);
  m.w_out = init_normal({hidden, 1 + feature_channels}, static_cast<double>(hidden), rng, 1.0);
  m.b_out = init_constant({1 + feature_channels}, 0.0f);
  return m;
}

ParamList DecoderMLP::params(const std::string& prefix) {
  return {{prefix + ".w1", &w1}, {prefix + ".b1", &b1}, {prefix + ".a1", &a1},
          {prefix + ".w2", &w2}, {prefix + ".b2", &b2}, {prefix + ".a2", &a2},
          {prefix + ".w_out", &w_out}, {prefix + ".b_out", &b_out}};
}

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using CMap = Eigen::Map<const RowMat<T>>;
template <class T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;
template <class T>
using CMapRow = Eigen::Map<const RowVec<T>>;

constexpr int64_t kMlpChunk = 2048;

// Row-order accumulation; Eigen's vectorized colwise().sum() can change its
// summation order with buffer alignment, which breaks run-to-run determinism.
template <class T>
void add_column_sums(const RowMat<T>& m, T* out) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out[j] += m(i, j);
}

template <class T>
T sigmoid_of(T v) {
  if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

template <class T>
void prelu_rows(RowMat<T>& z, const T* alpha) {
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    T* row = z.row(i).data();
    for (Eigen::Index j = 0; j < z.cols(); ++j) row[j] = std::max(row[j], T(0)) + alpha[j] * std::min(row[j], T(0));
  }
}

// Pre-activations of both hidden layers for rows [b, e).
template <class T>
struct MlpChunk {
  RowMat<T> z1, h1, z2, h2;
};

template <class T>
void mlp_hidden(const T* x, int64_t b, int64_t e, int64_t c, const std::vector<const std::vector<T>*>& p,
                MlpChunk<T>& k) {
  const int64_t hid = static_cast<int64_t>(p[1]->size());
  k.z1.noalias() = CMap<T>(x + b * c, e - b, c) * CMap<T>(p[0]->data(), c, hid);
  k.z1.rowwise() += CMapRow<T>(p[1]->data(), hid);
  k.h1 = k.z1;
  prelu_rows(k.h1, p[2]->data());
  k.z2.noalias() = k.h1 * CMap<T>(p[3]->data(), hid, hid);
  k.z2.rowwise() += CMapRow<T>(p[4]->data(), hid);
  k.h2 = k.z2;
  prelu_rows(k.h2, p[5]->data());
}

}  // namespace

template <class T>
BasicTensor<T> decoder_mlp(const BasicTensor<T>& x, const BasicTensor<T>& w1, const BasicTensor<T>& b1,
                           const BasicTensor<T>& a1, const BasicTensor<T>& w2, const BasicTensor<T>& b2,
                           const BasicTensor<T>& a2, const BasicTensor<T>& w_out, const BasicTensor<T>& b_out) {
  if (x.rank() != 2 || w1.rank() != 2 || w1.dim(0) != x.dim(1)) {
    throw DimensionError("decoder_mlp: input " + to_string(x.shape()) + " vs first layer " + to_string(w1.shape()));
  }
  const int64_t m = x.dim(0), c = x.dim(1), hid = w1.dim(1), out = w_out.numel() / hid;
  if (b1.numel() != hid || a1.numel() != hid || w2.shape() != Shape{hid, hid} || b2.numel() != hid ||
      a2.numel() != hid || w_out.shape() != Shape{hid, out} || b_out.numel() != out || out < 4) {
    throw DimensionError("decoder_mlp: inconsistent layer shapes");
  }
  auto values = [](std::initializer_list<const BasicTensor<T>*> ts) {
    std::vector<const std::vector<T>*> v;
    for (auto* t : ts) v.push_back(&t->node()->value);
    return v;
  };
  const auto p = values({&w1, &b1, &a1, &w2, &b2, &a2, &w_out, &b_out});
  std::vector<T> y(static_cast<std::size_t>(m * out));
  // Hidden activations are kept for backward when a graph is recorded.
  const bool keep = grad_enabled() && (x.requires_grad() || w1.requires_grad() || b1.requires_grad() ||
                                       a1.requires_grad() || w2.requires_grad() || b2.requires_grad() ||
                                       a2.requires_grad() || w_out.requires_grad() || b_out.requires_grad());
  auto cache = std::make_shared<std::vector<MlpChunk<T>>>(keep ? chunk_count(m, kMlpChunk) : 0);
  parallel_chunks(m, kMlpChunk, [&](int64_t ci, int64_t b, int64_t e) {
    MlpChunk<T> local;
    MlpChunk<T>& k = keep ? (*cache)[static_cast<std::size_t>(ci)] : local;
    mlp_hidden(x.data().data(), b, e, c, p, k);
    Eigen::Map<RowMat<T>> o(y.data() + b * out, e - b, out);
    o.noalias() = k.h2 * CMap<T>(p[6]->data(), hid, out);
    o.rowwise() += CMapRow<T>(p[7]->data(), out);
    for (Eigen::Index i = 0; i < o.rows(); ++i) {
      T* row = o.row(i).data();
      row[0] = std::max(row[0], T(0)) + std::log1p(std::exp(-std::abs(row[0])));
      for (int j = 1; j < 4; ++j) row[j] = sigmoid_of(row[j]);
    }
  });
  return detail::record<T>(
      "decoder_mlp", {m, out}, std::move(y), {&x, &w1, &b1, &a1, &w2, &b2, &a2, &w_out, &b_out},
      [m, c, hid, out, cache](Node<T>& self) {
        std::vector<const std::vector<T>*> p;
        for (std::size_t i = 1; i < 9; ++i) p.push_back(&self.parents[i]->value);
        const T* xv = self.parents[0]->value.data();
        T* gx = detail::parent_grad(self, 0);
        const int64_t chunks = chunk_count(m, kMlpChunk);
        // Per-chunk parameter gradients, reduced in chunk order.
        const std::array<int64_t, 8> sizes{c * hid, hid, hid, hid * hid, hid, hid, hid * out, out};
        std::vector<std::array<std::vector<T>, 8>> partial(static_cast<std::size_t>(chunks));
        parallel_chunks(m, kMlpChunk, [&](int64_t ci, int64_t b, int64_t e) {
          auto& g = partial[static_cast<std::size_t>(ci)];
          for (std::size_t i = 0; i < 8; ++i) g[i].assign(static_cast<std::size_t>(sizes[i]), T(0));
          const MlpChunk<T>& k = (*cache)[static_cast<std::size_t>(ci)];
          const int64_t n = e - b;
          RowMat<T> d_out = CMap<T>(self.grad.data() + b * out, n, out);
          const T* yv = self.value.data() + b * out;
          for (int64_t i = 0; i < n; ++i) {
            const T* yr = yv + i * out;
            // softplus' = sigmoid(z) = 1 - exp(-softplus(z))
            d_out(i, 0) *= -std::expm1(-yr[0]);
            for (int j = 1; j < 4; ++j) d_out(i, j) *= yr[j] * (T(1) - yr[j]);
          }
          Eigen::Map<RowMat<T>>(g[6].data(), hid, out).noalias() += k.h2.transpose() * d_out;
          add_column_sums(d_out, g[7].data());
          RowMat<T> d2 = d_out * CMap<T>(p[6]->data(), hid, out).transpose();
          const T* a2 = p[5]->data();
          for (int64_t i = 0; i < n; ++i) {
            for (int64_t j = 0; j < hid; ++j) {
              const T z = k.z2(i, j);
              g[5][j] += d2(i, j) * std::min(z, T(0));
              d2(i, j) *= z > T(0) ? T(1) : a2[j];
            }
          }
          Eigen::Map<RowMat<T>>(g[3].data(), hid, hid).noalias() += k.h1.transpose() * d2;
          add_column_sums(d2, g[4].data());
          RowMat<T> d1 = d2 * CMap<T>(p[3]->data(), hid, hid).transpose();
          const T* a1 = p[2]->data();
          for (int64_t i = 0; i < n; ++i) {
            for (int64_t j = 0; j < hid; ++j) {
              const T z = k.z1(i, j);
              g[2][j] += d1(i, j) * std::min(z, T(0));
              d1(i, j) *= z > T(0) ? T(1) : a1[j];
            }
          }
          Eigen::Map<RowMat<T>>(g[0].data(), c, hid).noalias() += CMap<T>(xv + b * c, n, c).transpose() * d1;
          add_column_sums(d1, g[1].data());
          if (gx) {
            Eigen::Map<RowMat<T>>(gx + b * c, n, c).noalias() += d1 * CMap<T>(p[0]->data(), c, hid).transpose();
          }
        });
        for (std::size_t i = 0; i < 8; ++i) {
          T* dst = detail::parent_grad(self, i + 1);
          if (!dst) continue;
          for (const auto& g : partial) {
            for (int64_t j = 0; j < sizes[i]; ++j) dst[j] += g[i][static_cast<std::size_t>(j)];
          }
        }
      });
}

template Tensor decoder_mlp(const Tensor&, const Tensor&, const Tensor&, const Tensor&, const Tensor&,
                            const Tensor&, const Tensor&, const Tensor&, const Tensor&);
template TensorD decoder_mlp(const TensorD&, const TensorD&, const TensorD&, const TensorD&, const TensorD&,
                             const TensorD&, const TensorD&, const TensorD&, const TensorD&);

DecodedField decode_features(const Tensor& features, const DecoderMLP& mlp) {
  auto out = decoder_mlp(features, mlp.w1, mlp.b1, mlp.a1, mlp.w2, mlp.b2, mlp.a2, mlp.w_out, mlp.b_out);
  DecodedField field;
  field.sigma = reshape(slice(out, 1, 0, 1), {out.dim(0)});
  field.features = slice(out, 1, 1, out.dim(1));
  return field;
}

SuperResolution SuperResolution::init(int64_t feature_channels, int64_t hidden, Rng& rng) {
  SuperResolution s;
  s.w1 = init_normal({4 * hidden, feature_channels, 3, 3}, static_cast<double>(9 * feature_channels), rng);
  s.b1 = init_constant({4 * hidden}, 0.0f);
  s.a1 = init_constant({hidden}, 0.25f);
  s.w2 = init_normal({3, hidden, 3, 3}, static_cast<double>(9 * hidden), rng, 1.0);
  s.b2 = init_constant({3}, 0.0f);
  return s;
}

ParamList SuperResolution::params(const std::string& prefix) {
  return {{prefix + ".w1", &w1}, {prefix + ".b1", &b1}, {prefix + ".a1", &a1},
          {prefix + ".w2", &w2}, {prefix + ".b2", &b2}};
}

RenderParams RenderParams::init(const RenderConfig& cfg, int64_t plane_channels, Rng& rng) {
  cfg.validate();
  RenderParams p;
  p.mlp = DecoderMLP::init(plane_channels, cfg.mlp_hidden, cfg.feature_channels, rng);
  p.sr = SuperResolution::init(cfg.feature_channels, cfg.sr_hidden, rng);
  return p;
}

ParamList RenderParams::params(const std::string& prefix) {
  return concat_params({mlp.params(prefix + ".mlp"), sr.params(prefix + ".sr")});
}

RenderParams RenderParams::clone() const {
  RenderParams out = *this;
  for (auto& p : out.params()) *p.tensor = p.tensor->clone();
  return out;
}

Tensor render_feature_image(const TriPlane& tri, const DecoderMLP& mlp, const Camera& cam,
                            const RenderConfig& cfg, SampleSpec spec) {
  cfg.validate();
  const auto samples = make_ray_samples(cam, cfg.low_res, cfg.n_samples, tri.bound(), spec);
  const auto field = decode_features(sample_triplane(tri, samples.points), mlp);
  const int64_t cf = mlp.feature_channels();
  auto sigma = reshape(field.sigma, {samples.rays, samples.samples});
  auto colors = reshape(field.features, {samples.rays, samples.samples, cf});
  auto pixels = composite_rays(sigma, colors, samples.deltas);
  return reshape(transpose(pixels), {cf, cfg.low_res, cfg.low_res});
}

Tensor super_resolve(const Tensor& feature_image, const SuperResolution& sr) {
  if (feature_image.rank() != 3 || feature_image.dim(0) != sr.w1.dim(1)) {
    throw DimensionError("super_resolve: feature image " + to_string(feature_image.shape()) +
                         " does not match upsampler input channels");
  }
  const int64_t n = feature_image.dim(1);
  auto x = reshape(feature_image, {1, feature_image.dim(0), n, feature_image.dim(2)});
  auto h = pixel_shuffle(conv2d(x, sr.w1, sr.b1, 1, Padding::Zero), 2);
  h = prelu(h, sr.a1);
  auto out = sigmoid(conv2d(h, sr.w2, sr.b2, 1, Padding::Zero));
  return reshape(out, {3, 2 * n, 2 * feature_image.dim(2)});
}

RenderOutput render(const TriPlane& tri, const RenderParams& params, const Camera& cam,
                    const RenderConfig& cfg, SampleSpec spec) {
  auto feat = render_feature_image(tri, params.mlp, cam, cfg, spec);
  RenderOutput out;
  out.raw = reshape(slice(reshape(feat, {feat.dim(0), cfg.low_res * cfg.low_res}), 0, 0, 3),
                    {3, cfg.low_res, cfg.low_res});
  out.image = super_resolve(feat, params.sr);
  return out;
}

}  // namespace tpn

#include "tpn/losses.hpp"

#include "tpn/ops.hpp"

namespace tpn {

namespace {

// Frozen conv layer weights: not trainable, seeded.
void add_layer(std::vector<Tensor>& ws, std::vector<Tensor>& bs, int64_t out, int64_t in, Rng& rng) {
  auto w = init_normal({out, in, 3, 3}, static_cast<double>(9 * in), rng, 1.0);
  auto b = init_normal({out}, 1.0, rng, 0.1);
  w.set_requires_grad(false);
  b.set_requires_grad(false);
  ws.push_back(std::move(w));
  bs.push_back(std::move(b));
}

Tensor as_batch(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw DimensionError("loss: expected a [3,H,W] image, got " + to_string(image.shape()));
  }
  // Inputs are mapped from [0, 1] to [-1, 1].
  return add_scalar(scale(reshape(image, {1, 3, image.dim(1), image.dim(2)}), 2.0f), -1.0f);
}

constexpr int kPerceptualStrides[] = {1, 2, 2};

}  // namespace

PerceptualProxy PerceptualProxy::create(uint64_t seed) {
  Rng rng(seed);
  PerceptualProxy p;
  add_layer(p.weights, p.biases, 8, 3, rng);
  add_layer(p.weights, p.biases, 16, 8, rng);
  add_layer(p.weights, p.biases, 16, 16, rng);
  return p;
}

std::vector<Tensor> PerceptualProxy::features(const Tensor& image) const {
  std::vector<Tensor> out;
  auto x = as_batch(image);
  for (int scale_index = 0; scale_index < 2; ++scale_index) {
    if (scale_index == 1) x = avg_pool2d(x, 2);
    Tensor h = x;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      h = tanh(conv2d(h, weights[l], biases[l], kPerceptualStrides[l], Padding::Zero));
      out.push_back(h);
    }
  }
  return out;
}

IdentityProxy IdentityProxy::create(uint64_t seed) {
  Rng rng(seed);
  IdentityProxy p;
  add_layer(p.weights, p.biases, 16, 3, rng);
  add_layer(p.weights, p.biases, 32, 16, rng);
  add_layer(p.weights, p.biases, 32, 32, rng);
  return p;
}

Tensor IdentityProxy::embed(const Tensor& image) const {
  Tensor h = as_batch(image);
  for (std::size_t l = 0; l < weights.size(); ++l) h = tanh(conv2d(h, weights[l], biases[l], 2, Padding::Zero));
  return l2_normalize_rows(global_avg_pool(h));
}

LossProxies LossProxies::create(uint64_t seed) {
  return {PerceptualProxy::create(seed), IdentityProxy::create(seed + 1)};
}

Tensor loss_l2(const Tensor& a, const Tensor& b) { return mse(a, b); }

Tensor loss_smooth_l1(const Tensor& a, const Tensor& b, float beta) { return smooth_l1(a, b, beta); }

Tensor loss_perceptual(const Tensor& a, const Tensor& b, const PerceptualProxy& proxy) {
  if (a.shape() != b.shape()) throw DimensionError("loss_perceptual: image shapes differ");
  const auto fa = proxy.features(a);
  const auto fb = proxy.features(b);
  Tensor total = mse(fa[0], fb[0]);
  for (std::size_t i = 1; i < fa.size(); ++i) total = add(total, mse(fa[i], fb[i]));
  return total;
}

Tensor loss_id(const Tensor& a, const Tensor& b, const IdentityProxy& proxy) {
  if (a.shape() != b.shape()) throw DimensionError("loss_id: image shapes differ");
  return scale(sum(square(sub(proxy.embed(a), proxy.embed(b)))), 0.5f);
}

Tensor loss_first_branch(const Tensor& x, const Tensor& y_hat, const LossWeights& w, const LossProxies& p) {
  auto l = scale(loss_l2(x, y_hat), static_cast<float>(w.l1));
  l = add(l, scale(loss_perceptual(x, y_hat, p.perceptual), static_cast<float>(w.l2)));
  return add(l, scale(loss_id(x, y_hat, p.identity), static_cast<float>(w.l3)));
}

Tensor loss_second_branch(const Tensor& x, const Tensor& y, const LossWeights& w, const LossProxies& p) {
  auto l = scale(loss_smooth_l1(x, y), static_cast<float>(w.l4));
  l = add(l, scale(loss_perceptual(x, y, p.perceptual), static_cast<float>(w.l5)));
  return add(l, scale(loss_id(x, y, p.identity), static_cast<float>(w.l6)));
}

Tensor loss_total(const Tensor& x, const Tensor& y, const Tensor& y_hat, const LossWeights& w,
                  const LossProxies& p) {
  return add(loss_first_branch(x, y_hat, w, p), loss_second_branch(x, y, w, p));
}

}  // namespace tpn

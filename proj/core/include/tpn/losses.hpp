#pragma once

// Reconstruction losses for both inversion branches. The perceptual and
// identity terms use frozen, seeded random conv features in place of
// pretrained LPIPS / face-recognition networks.

#include <cstdint>
#include <vector>

#include "tpn/nn.hpp"
#include "tpn/tensor.hpp"

namespace tpn {

struct LossWeights {
  double l1 = 1.0;  // L2, first branch
  double l2 = 1.0;  // perceptual, first branch
  double l3 = 0.1;  // identity, first branch
  double l4 = 1.0;  // smooth L1, second branch
  double l5 = 0.1;  // perceptual, second branch
  double l6 = 0.1;  // identity, second branch

  LossWeights scaled(double k) const { return {l1 * k, l2 * k, l3 * k, l4 * k, l5 * k, l6 * k}; }
};

// Three conv layers (3->8 stride 1, 8->16 stride 2, 16->16 stride 2) with
// tanh, applied to the image and to its 2x average-pooled copy.
struct PerceptualProxy {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;

  static PerceptualProxy create(uint64_t seed);
  // Feature maps of both scales, in a fixed order.
  std::vector<Tensor> features(const Tensor& image) const;
};

// Conv embedder (3->16->32->32, all stride 2, tanh) -> global average pool
// -> unit-norm 32-vector.
struct IdentityProxy {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;

  static IdentityProxy create(uint64_t seed);
  Tensor embed(const Tensor& image) const;  // [1, 32]
};

struct LossProxies {
  PerceptualProxy perceptual;
  IdentityProxy identity;

  static LossProxies create(uint64_t seed = 7);
};

Tensor loss_l2(const Tensor& a, const Tensor& b);
Tensor loss_smooth_l1(const Tensor& a, const Tensor& b, float beta = 1.0f);
// Sum over layers and scales of the mean squared feature difference.
Tensor loss_perceptual(const Tensor& a, const Tensor& b, const PerceptualProxy& proxy);
// 1 - <e(a), e(b)>, evaluated as |e(a) - e(b)|^2 / 2 so that it is exactly
// zero for identical embeddings and lies in [0, 2].
Tensor loss_id(const Tensor& a, const Tensor& b, const IdentityProxy& proxy);

// lambda1 L2 + lambda2 P + lambda3 ID on (x, y_hat).
Tensor loss_first_branch(const Tensor& x, const Tensor& y_hat, const LossWeights& w, const LossProxies& p);
// lambda4 smoothL1 + lambda5 P + lambda6 ID on (x, y).
Tensor loss_second_branch(const Tensor& x, const Tensor& y, const LossWeights& w, const LossProxies& p);
Tensor loss_total(const Tensor& x, const Tensor& y, const Tensor& y_hat, const LossWeights& w,
                  const LossProxies& p);

}  // namespace tpn

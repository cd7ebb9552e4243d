#pragma once

// The two inversion branches: a latent encoder (image -> W+ residual over
// w_bar) and a U-Net predicting tri-plane offsets from the first-branch
// reconstruction and its residual.

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "tpn/generator.hpp"
#include "tpn/nn.hpp"
#include "tpn/renderer.hpp"
#include "tpn/triplane.hpp"

namespace tpn {

// conv3x3 (+ optional stride) followed by per-channel prelu.
struct ConvPrelu {
  Tensor w, b, alpha;
  int stride = 1;

  static ConvPrelu init(int64_t in, int64_t out, int stride, Rng& rng);
  Tensor operator()(const Tensor& x) const;
  ParamList params(const std::string& prefix);
};

struct EncoderConfig {
  int64_t image_res = 64;
  std::vector<int64_t> stages{32, 64, 96, 128};
  int64_t head_channels = 96;
};

// Backbone of stride-2 stages (two convs each) and one map2style head per
// latent row: conv -> global average pool -> linear to D.
struct LatentEncoder {
  EncoderConfig cfg;
  int64_t w_rows = 0, w_dim = 0;
  std::vector<ConvPrelu> backbone;
  std::vector<ConvPrelu> head_convs;
  std::vector<Tensor> head_w, head_b;

  static LatentEncoder init(const EncoderConfig& cfg, int64_t w_rows, int64_t w_dim, Rng& rng);
  ParamList params(const std::string& prefix = "phi");
  LatentEncoder clone() const;
};

// U-Net on concat(y_hat, x - y_hat): four stride-2 encoder stages with skips,
// a bottleneck, pixel-shuffle decoder stages back to half the input
// resolution and a zero-initialized 1x1 conv to 3C channels.
struct OffsetNet {
  EncoderConfig cfg;
  TriPlaneConfig planes;
  std::vector<ConvPrelu> down;        // 2 per stage
  ConvPrelu bottleneck;
  std::vector<Tensor> up_w, up_b, up_alpha;  // sub-pixel upsampling convs
  std::vector<ConvPrelu> dec;         // 2 per decoder stage
  Tensor out_w, out_b;

  static OffsetNet init(const EncoderConfig& cfg, const TriPlaneConfig& planes, Rng& rng);
  ParamList params(const std::string& prefix = "psi");
  OffsetNet clone() const;
};

// w_hat = phi(x) + w_bar. x is [3, res, res].
Tensor encode_latent(const Tensor& x, const LatentEncoder& phi, const Tensor& w_bar);

// Delta T = psi(concat(y_hat, x - y_hat)).
TriPlane predict_offsets(const Tensor& y_hat, const Tensor& x, const OffsetNet& psi);

struct InversionResult {
  Tensor w_hat;       // [K, D]
  TriPlane base;      // T = G(w_hat) (possibly from tuned generator weights)
  TriPlane delta;     // Delta T (zeros when the method has no second stage on tri-planes)
  Tensor y_initial;   // first-stage image
  Tensor y_final;     // final image
  std::vector<Tensor> refinements;  // CTTR images, one per round
  std::vector<std::pair<std::string, double>> stage_losses;
  std::vector<std::pair<std::string, double>> stage_seconds;
  // Set when the generator was fine-tuned; renders must use these weights.
  std::shared_ptr<GeneratorState> tuned;
};

// y_hat = R(G(phi(x) + w_bar)), Delta T = psi(y_hat, x - y_hat), y = R(T + Delta T).
InversionResult invert_forward(const Tensor& x, const Camera& cam, const LatentEncoder& phi, const OffsetNet& psi,
                               const GeneratorState& state, SampleSpec spec = {});

// Each round: Delta T_r = psi(y_prev, x - y_prev), y = R(T + Delta T_r), always
// on the initial T. Appends to result.refinements and updates y_final/delta.
void cttr_refine(const Tensor& x, const Camera& cam, InversionResult& result, const OffsetNet& psi,
                 const GeneratorState& state, int n_rounds, SampleSpec spec = {});

}  // namespace tpn

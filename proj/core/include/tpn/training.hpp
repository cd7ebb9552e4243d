#pragma once

// Generator pre-training (auto-decoding of the scene dataset) and the
// two-branch encoder training schedule.

#include <cstdint>
#include <functional>
#include <vector>

#include "tpn/encoders.hpp"
#include "tpn/generator.hpp"
#include "tpn/losses.hpp"
#include "tpn/scenes.hpp"

namespace tpn {

struct GeneratorFitConfig {
  GeneratorConfig generator;
  RenderConfig render;
  int steps = 3000;
  int batch = 4;
  double lr = 2e-3;
  double latent_lr = 1e-2;
  double final_lr_fraction = 0.1;  // cosine decay to lr * fraction
  double raw_weight = 0.5;         // L2 on the low-resolution raw render
  double perceptual_weight = 0.1;
  double latent_reg = 1e-3;        // keeps table latents near N(0, I)
  int w_bar_samples = 4096;
  uint64_t seed = 1;

  void validate() const;
};

// step, batch loss
using StepCallback = std::function<void(int, double)>;

struct GeneratorFitResult {
  GeneratorState state;
  std::vector<double> losses;
};

GeneratorFitResult fit_autodecoder(const Dataset& data, const GeneratorFitConfig& cfg, const LossProxies& proxies,
                                   const StepCallback& on_step = {});

// Mean PSNR of the fitted renders over the first `max_views` dataset views
// (all when negative), each rendered from its own table latent.
double train_view_psnr(const GeneratorState& state, const Dataset& data, int max_views = -1);

struct TrainSchedule {
  int total_steps = 4000;
  int second_branch_start = 400;
  int first_branch_freeze = 2000;
  int batch = 3;
  double lr = 1e-4;
  double generated_fraction = 0.5;
  uint64_t seed = 2;

  void validate() const;
};

struct EncoderTrainResult {
  LatentEncoder phi;
  OffsetNet psi;
  std::vector<double> loss_phi;    // per step; NaN when the branch is not trained
  std::vector<double> loss_psi;
  std::vector<double> loss_total;  // objective actually minimized at the step
};

// The generator is frozen throughout. Phase 1 trains phi on L_phi; phase 2
// trains both on L_phi + L_psi; phase 3 trains psi alone on L_psi.
EncoderTrainResult train_encoders(const GeneratorState& state, const Dataset& data, const TrainSchedule& schedule,
                                  const LossWeights& weights, const LossProxies& proxies,
                                  const EncoderConfig& enc = {}, const StepCallback& on_step = {});

// Moving average with the given window (shorter at the start).
std::vector<double> smooth(const std::vector<double>& v, int window);

}  // namespace tpn

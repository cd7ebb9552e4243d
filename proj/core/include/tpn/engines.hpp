#pragma once

// Inversion procedures (latent optimization, pivotal tuning, tri-plane offset
// optimization, encoder-based) and the evaluation harness that compares them.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tpn/encoders.hpp"
#include "tpn/generator.hpp"
#include "tpn/losses.hpp"
#include "tpn/metrics.hpp"
#include "tpn/optim.hpp"
#include "tpn/scenes.hpp"

namespace tpn {

enum class OptimMethod { Adam, Lbfgs };

struct OptimConfig {
  OptimMethod method = OptimMethod::Adam;
  int steps = 200;
  double lr = 0.01;  // Adam only
  double l2_weight = 1.0;
  double perceptual_weight = 1.0;
  double reg_weight = 0.0;  // tri-plane optimization: pull towards the first-branch image
  uint64_t seed = 0;
  bool track_best = true;
  int lbfgs_history = 10;

  void validate() const;
};

OptimConfig wplus_defaults();
OptimConfig pti_defaults();
OptimConfig triplane_defaults();

struct MinimizeResult {
  std::vector<double> trace;  // objective at every evaluated iterate, trace[0] at the start
  double initial = 0;
  double final = 0;  // objective of the parameters left in place
  bool line_search_failed = false;
};

// Minimizes objective() over `params` (which must be trainable leaves) and
// leaves the best (or, without tracking, the last) iterate in place.
MinimizeResult minimize(const ParamList& params, const std::function<Tensor()>& objective, const OptimConfig& cfg);

// l2_weight * L2 + perceptual_weight * P on (x, y).
Tensor image_objective(const Tensor& x, const Tensor& y, const OptimConfig& cfg, const LossProxies& proxies);

struct WPlusResult {
  Tensor w;
  Tensor image;
  MinimizeResult opt;
};

// Adam over w starting from w_bar.
WPlusResult optimize_wplus(const Tensor& x, const Camera& cam, const GeneratorState& state,
                           const LossProxies& proxies, const OptimConfig& cfg = wplus_defaults());

struct PtiResult {
  std::shared_ptr<GeneratorState> tuned;
  Tensor image;
  MinimizeResult opt;
};

// Fine-tunes synthesis and rendering weights with w fixed at the pivot; the
// mapping network stays frozen. `state` is not modified.
PtiResult finetune_generator_pti(const Tensor& x, const Camera& cam, const Tensor& w_pivot,
                                 const GeneratorState& state, const LossProxies& proxies,
                                 const OptimConfig& cfg = pti_defaults());

struct TriplaneOptResult {
  TriPlane delta;
  Tensor image;
  MinimizeResult opt;
};

// Optimizes Delta T from zero with objective
//   L2(x,y) + lp P(x,y) + lr (L2(y,y_hat) + lp P(y,y_hat)),  y = R(base + Delta T),
// where lp = cfg.perceptual_weight and lr = cfg.reg_weight.
TriplaneOptResult optimize_triplane_offsets(const Tensor& x, const Camera& cam, const TriPlane& base,
                                            const Tensor& y_hat, const GeneratorState& state,
                                            const LossProxies& proxies, const OptimConfig& cfg = triplane_defaults());

enum class Method { WPlus, Pti, WPlusTriplaneOpt, Encoder, EncoderPti, EncoderTriplaneOpt, EncoderCttr, Psp };

std::string method_name(Method m);
Method parse_method(const std::string& name);
// The seven compared configurations; Psp (first branch only) is extra.
const std::vector<Method>& compared_methods();
bool needs_encoders(Method m);

struct EngineConfig {
  OptimConfig wplus = wplus_defaults();
  OptimConfig pti = pti_defaults();
  OptimConfig triplane = triplane_defaults();
  int cttr_rounds = 1;
};

struct InversionModels {
  const GeneratorState* state = nullptr;
  const LatentEncoder* phi = nullptr;
  const OffsetNet* psi = nullptr;
  const LossProxies* proxies = nullptr;
};

// Runs one method. `wplus_stage`, if given, is a previous WPlus result for the
// same input and is reused by methods that start with latent optimization.
InversionResult run_inversion(const Tensor& x, const Camera& cam, Method method, const InversionModels& models,
                              const EngineConfig& cfg = {}, const InversionResult* wplus_stage = nullptr);

// base + delta (or base alone when the method produced no offsets).
TriPlane final_triplane(const InversionResult& r);
// Renders the final representation of r at another camera.
Tensor render_result(const InversionResult& r, const GeneratorState& state, const Camera& cam);
double total_seconds(const InversionResult& r);

struct EvalCase {
  SceneSpec scene;
  Camera camera;
  Tensor image;  // quantized oracle render at `camera`
};

struct EvalConfig {
  int n_scenes = 32;
  uint64_t seed = 1000;
  std::vector<double> yaw_offsets = default_yaw_offsets();
  OracleConfig oracle;
  PoseRange input_pose{0.1, 0.1};
};

// Held-out scenes: seeds are disjoint from build_dataset's for any seed.
std::vector<EvalCase> make_eval_cases(const EvalConfig& cfg);

struct EvalRow {
  std::string method;
  ViewMetrics same_view;              // yaw_offset = 0
  std::vector<ViewMetrics> novel;     // one per configured yaw offset, averaged over scenes
  ViewMetrics novel_average;          // mean over the yaw offsets
  std::vector<double> scene_psnr;     // same-view PSNR per scene
  double seconds = 0;                 // mean wall clock per scene
};

struct EvalReport {
  uint64_t seed = 0;
  int n_scenes = 0;
  std::vector<double> yaw_offsets;
  std::vector<EvalRow> rows;

  const EvalRow& row(const std::string& method) const;
};

using EvalProgress = std::function<void(const std::string& method, int scene, int n_scenes)>;

EvalReport run_eval(const std::vector<Method>& methods, const InversionModels& models, const EngineConfig& engine,
                    const EvalConfig& cfg, const EvalProgress& progress = {});

}  // namespace tpn

// Hot paths of training and inversion at desk defaults.

#include <benchmark/benchmark.h>

#include "tpn/encoders.hpp"
#include "tpn/generator.hpp"
#include "tpn/losses.hpp"
#include "tpn/ops.hpp"
#include "tpn/scenes.hpp"

namespace {

using namespace tpn;

GeneratorState& state() {
  static GeneratorState s = GeneratorState::init(GeneratorConfig{}, RenderConfig{}, 4, 3);
  return s;
}

void BM_RenderForward(benchmark::State& st) {
  auto& s = state();
  NoGradGuard ng;
  const TriPlane tri = synthesize_triplanes(s.w_bar, s.gen);
  const Camera cam;
  for (auto _ : st) benchmark::DoNotOptimize(render(tri, s.render, cam, s.render_cfg).image);
}
BENCHMARK(BM_RenderForward)->Unit(benchmark::kMillisecond);

void BM_RenderForwardBackward(benchmark::State& st) {
  auto& s = state();
  Tensor w = s.w_bar.detach();
  w.set_requires_grad(true);
  const Camera cam;
  for (auto _ : st) {
    auto img = s.render_latent(w, cam).image;
    benchmark::DoNotOptimize(backward(mean(img)));
  }
}
BENCHMARK(BM_RenderForwardBackward)->Unit(benchmark::kMillisecond);

void BM_OracleRender(benchmark::State& st) {
  const SceneSpec scene = make_scene(11);
  const Camera cam;
  for (auto _ : st) benchmark::DoNotOptimize(render_scene_oracle(scene, cam));
}
BENCHMARK(BM_OracleRender)->Unit(benchmark::kMillisecond);

void BM_SamplePlanes(benchmark::State& st) {
  Rng rng(1);
  const Tensor planes = init_normal({3, 8, 32, 32}, 1.0, rng, 0.5);
  const auto samples = make_ray_samples(Camera{}, 32, 48, 1.0);
  for (auto _ : st) {
    auto f = sample_planes(planes, samples.points, 1.0f);
    benchmark::DoNotOptimize(backward(sum(f)));
  }
}
BENCHMARK(BM_SamplePlanes)->Unit(benchmark::kMillisecond);

void BM_EncoderForward(benchmark::State& st) {
  Rng rng(2);
  auto& s = state();
  const LatentEncoder phi = LatentEncoder::init(EncoderConfig{}, 6, 32, rng);
  const OffsetNet psi = OffsetNet::init(EncoderConfig{}, s.gen.cfg.planes, rng);
  const Tensor x = Tensor::full({3, 64, 64}, 0.5f);
  NoGradGuard ng;
  for (auto _ : st) benchmark::DoNotOptimize(invert_forward(x, Camera{}, phi, psi, s).y_final);
}
BENCHMARK(BM_EncoderForward)->Unit(benchmark::kMillisecond);

void BM_PerceptualLoss(benchmark::State& st) {
  const auto proxies = LossProxies::create();
  Tensor a = Tensor::full({3, 64, 64}, 0.4f, true);
  const Tensor b = Tensor::full({3, 64, 64}, 0.6f);
  for (auto _ : st) benchmark::DoNotOptimize(backward(loss_perceptual(a, b, proxies.perceptual)));
}
BENCHMARK(BM_PerceptualLoss)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

#include "tpn/training.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <optional>

#include "tpn/metrics.hpp"
#include "tpn/ops.hpp"
#include "tpn/optim.hpp"

namespace tpn {

void GeneratorFitConfig::validate() const {
  generator.validate();
  render.validate();
  if (steps < 0 || batch < 1) throw UsageError("fit_autodecoder: steps must be >= 0 and batch >= 1");
  if (!(lr >= 0) || !(latent_lr >= 0)) throw UsageError("fit_autodecoder: learning rates must be non-negative");
  if (w_bar_samples < 1) throw UsageError("fit_autodecoder: w_bar_samples must be >= 1");
}

void TrainSchedule::validate() const {
  if (!(0 <= second_branch_start && second_branch_start <= first_branch_freeze && first_branch_freeze <= total_steps)) {
    throw UsageError("train_encoders: schedule must satisfy 0 <= start <= freeze <= total");
  }
  if (batch < 1) throw UsageError("train_encoders: batch must be >= 1");
  if (!(generated_fraction >= 0 && generated_fraction <= 1)) {
    throw UsageError("train_encoders: generated_fraction must lie in [0, 1]");
  }
  if (!(lr >= 0)) throw UsageError("train_encoders: learning rate must be non-negative");
}

namespace {

void accumulate(GradientMap<float>& acc, GradientMap<float>&& g) {
  for (auto& [id, t] : g) {
    auto it = acc.find(id);
    if (it == acc.end()) {
      acc.emplace(id, std::move(t));
      continue;
    }
    auto dst = it->second.mutable_data();
    const auto src = t.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
}

Tensor half_resolution(const Tensor& image) {
  NoGradGuard no_grad;
  const int64_t h = image.dim(1), w = image.dim(2);
  return reshape(avg_pool2d(reshape(image, {1, 3, h, w}), 2), {3, h / 2, w / 2});
}

double cosine_lr(double lr, double final_fraction, int step, int steps) {
  if (steps <= 1) return lr;
  const double t = static_cast<double>(step) / (steps - 1);
  return lr * (final_fraction + (1 - final_fraction) * 0.5 * (1 + std::cos(std::numbers::pi * t)));
}

Tensor latent_row(const Tensor& latents, int64_t row) { return slice(latents, 0, row, row + 1); }

}  // namespace

GeneratorFitResult fit_autodecoder(const Dataset& data, const GeneratorFitConfig& cfg, const LossProxies& proxies,
                                   const StepCallback& on_step) {
  cfg.validate();
  if (data.samples.empty()) throw UsageError("fit_autodecoder: empty dataset");
  if (data.samples.front().image.dim(1) != cfg.render.final_res) {
    throw DimensionError("fit_autodecoder: dataset resolution does not match render.final_res");
  }
  GeneratorFitResult out;
  out.state = GeneratorState::init(cfg.generator, cfg.render, data.latent_count(), cfg.seed);
  GeneratorState& s = out.state;
  Adam nets(s.params(), {cfg.lr});
  Adam codes({{"latents", &s.latents}}, {cfg.latent_lr});

  std::vector<Tensor> low_targets;
  for (const auto& sample : data.samples) low_targets.push_back(half_resolution(sample.image));

  Rng rng(cfg.seed ^ 0x666974ULL);
  std::uniform_int_distribution<std::size_t> pick(0, data.samples.size() - 1);
  const float inv_batch = 1.0f / static_cast<float>(cfg.batch);
  for (int step = 0; step < cfg.steps; ++step) {
    GradientMap<float> grads;
    double batch_loss = 0;
    for (int b = 0; b < cfg.batch; ++b) {
      const std::size_t i = pick(rng);
      const PosedImage& sample = data.samples[i];
      Tensor z = latent_row(s.latents, data.latent_index(sample));
      Tensor w = map_latent_raw(z, sample.camera, s.gen);
      RenderOutput r = s.render_latent(w, sample.camera);
      Tensor loss = add(loss_l2(sample.image, r.image),
                        scale(loss_l2(low_targets[i], r.raw), static_cast<float>(cfg.raw_weight)));
      if (cfg.perceptual_weight != 0) {
        loss = add(loss, scale(loss_perceptual(sample.image, r.image, proxies.perceptual),
                               static_cast<float>(cfg.perceptual_weight)));
      }
      if (cfg.latent_reg != 0) loss = add(loss, scale(mean(square(z)), static_cast<float>(cfg.latent_reg)));
      loss = scale(loss, inv_batch);
      batch_loss += loss.item();
      accumulate(grads, backward(loss));
    }
    nets.set_lr(cosine_lr(cfg.lr, cfg.final_lr_fraction, step, cfg.steps));
    codes.set_lr(cosine_lr(cfg.latent_lr, cfg.final_lr_fraction, step, cfg.steps));
    nets.step(grads);
    codes.step(grads);
    out.losses.push_back(batch_loss);
    if (on_step) on_step(step, batch_loss);
  }
  s.w_bar = estimate_w_bar(s.gen, cfg.w_bar_samples, cfg.seed ^ 0x77626172ULL);
  return out;
}

double train_view_psnr(const GeneratorState& state, const Dataset& data, int max_views) {
  NoGradGuard no_grad;
  const std::size_t n = max_views < 0 ? data.samples.size()
                                      : std::min(data.samples.size(), static_cast<std::size_t>(max_views));
  if (n == 0) throw UsageError("train_view_psnr: no views");
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& sample = data.samples[i];
    const Tensor w = map_latent_raw(latent_row(state.latents, data.latent_index(sample)), sample.camera, state.gen);
    acc += metric_psnr(state.render_latent(w, sample.camera).image, sample.image);
  }
  return acc / static_cast<double>(n);
}

EncoderTrainResult train_encoders(const GeneratorState& state, const Dataset& data, const TrainSchedule& schedule,
                                  const LossWeights& weights, const LossProxies& proxies, const EncoderConfig& enc,
                                  const StepCallback& on_step) {
  schedule.validate();
  if (data.samples.empty() && schedule.generated_fraction < 1) throw UsageError("train_encoders: empty dataset");
  GeneratorState g = state.clone();
  set_trainable(g.params(), false);
  g.latents.set_requires_grad(false);

  Rng rng(schedule.seed);
  EncoderTrainResult out;
  out.phi = LatentEncoder::init(enc, g.gen.cfg.w_rows, g.gen.cfg.w_dim, rng);
  out.psi = OffsetNet::init(enc, g.gen.cfg.planes, rng);
  Adam opt_phi(out.phi.params(), {schedule.lr});
  Adam opt_psi(out.psi.params(), {schedule.lr});

  std::bernoulli_distribution generated(schedule.generated_fraction);
  std::uniform_int_distribution<std::size_t> pick(0, data.samples.empty() ? 0 : data.samples.size() - 1);
  const float inv_batch = 1.0f / static_cast<float>(schedule.batch);
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();

  for (int step = 0; step < schedule.total_steps; ++step) {
    const bool train_phi = step < schedule.first_branch_freeze;
    const bool train_psi = step >= schedule.second_branch_start;
    GradientMap<float> grads;
    double l_phi = 0, l_psi = 0, l_total = 0;
    for (int b = 0; b < schedule.batch; ++b) {
      PosedImage sample;
      if (data.samples.empty() || generated(rng)) {
        const uint64_t seed = schedule.seed * 0x9e3779b97f4a7c15ULL + static_cast<uint64_t>(step) * 131 + b;
        sample = sample_generated_training(g, 1, 1.0, PoseRange{}, seed).front();
      } else {
        sample = data.samples[pick(rng)];
      }
      const Tensor& x = sample.image;
      const Camera& cam = sample.camera;

      Tensor w, y_hat;
      TriPlane base;
      {
        std::optional<NoGradGuard> frozen;
        if (!train_phi) frozen.emplace();
        w = encode_latent(x, out.phi, g.w_bar);
        base = synthesize_triplanes(w, g.gen);
        y_hat = render(base, g.render, cam, g.render_cfg).image;
      }
      Tensor loss;
      if (train_phi) {
        Tensor lp = loss_first_branch(x, y_hat, weights, proxies);
        l_phi += lp.item() * inv_batch;
        loss = lp;
      }
      if (train_psi) {
        const TriPlane delta = predict_offsets(y_hat, x, out.psi);
        const Tensor y = render(apply_offsets(base, delta), g.render, cam, g.render_cfg).image;
        Tensor ls = loss_second_branch(x, y, weights, proxies);
        l_psi += ls.item() * inv_batch;
        loss = loss.defined() ? add(loss, ls) : ls;
      }
      loss = scale(loss, inv_batch);
      l_total += loss.item();
      accumulate(grads, backward(loss));
    }
    if (train_phi) opt_phi.step(grads);
    if (train_psi) opt_psi.step(grads);
    out.loss_phi.push_back(train_phi ? l_phi : nan);
    out.loss_psi.push_back(train_psi ? l_psi : nan);
    out.loss_total.push_back(l_total);
    if (on_step) on_step(step, l_total);
  }
  return out;
}

std::vector<double> smooth(const std::vector<double>& v, int window) {
  if (window < 1) throw UsageError("smooth: window must be >= 1");
  std::vector<double> out(v.size());
  double acc = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    acc += v[i];
    if (i >= static_cast<std::size_t>(window)) acc -= v[i - window];
    out[i] = acc / static_cast<double>(std::min<std::size_t>(i + 1, window));
  }
  return out;
}

}  // namespace tpn

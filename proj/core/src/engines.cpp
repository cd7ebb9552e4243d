#include "tpn/engines.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "tpn/image_io.hpp"
#include "tpn/ops.hpp"

namespace tpn {

void OptimConfig::validate() const {
  if (steps < 1) throw UsageError("optimizer: steps must be >= 1");
  if (!(lr >= 0)) throw UsageError("optimizer: learning rate must be non-negative");
  if (lbfgs_history < 1) throw UsageError("optimizer: L-BFGS history must be >= 1");
}

OptimConfig wplus_defaults() { return {}; }

OptimConfig pti_defaults() {
  OptimConfig c;
  c.lr = 1e-3;
  return c;
}

OptimConfig triplane_defaults() {
  OptimConfig c;
  c.method = OptimMethod::Lbfgs;
  c.steps = 50;
  c.perceptual_weight = 0.1;
  c.reg_weight = 0.1;
  return c;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<double> flatten(const ParamList& params) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(count_values(params)));
  for (const auto& p : params) {
    for (float v : p.tensor->data()) out.push_back(v);
  }
  return out;
}

void unflatten(const ParamList& params, const std::vector<double>& x) {
  std::size_t k = 0;
  for (const auto& p : params) {
    for (float& v : p.tensor->mutable_data()) v = static_cast<float>(x[k++]);
  }
}

MinimizeResult minimize_adam(const ParamList& params, const std::function<Tensor()>& objective,
                             const OptimConfig& cfg) {
  MinimizeResult r;
  Adam adam(params, {cfg.lr});
  std::vector<Tensor> best;
  double best_f = 0;
  auto consider = [&](double f) {
    r.trace.push_back(f);
    if (!cfg.track_best) return;
    if (best.empty() || f < best_f) {
      best_f = f;
      best = snapshot(params);
    }
  };
  for (int s = 0; s < cfg.steps; ++s) {
    Tensor loss = objective();
    consider(loss.item());
    adam.step(backward(loss));
  }
  {
    NoGradGuard no_grad;
    consider(objective().item());
  }
  r.initial = r.trace.front();
  if (cfg.track_best) {
    restore(params, best);
    r.final = best_f;
  } else {
    r.final = r.trace.back();
  }
  return r;
}

MinimizeResult minimize_lbfgs(const ParamList& params, const std::function<Tensor()>& objective,
                              const OptimConfig& cfg) {
  auto f = [&](const std::vector<double>& x, std::vector<double>& g) {
    unflatten(params, x);
    Tensor loss = objective();
    auto grads = backward(loss);
    std::size_t k = 0;
    for (const auto& p : params) {
      auto it = grads.find(p.tensor->id());
      const auto n = static_cast<std::size_t>(p.tensor->numel());
      for (std::size_t i = 0; i < n; ++i) g[k + i] = it == grads.end() ? 0.0 : it->second.data()[i];
      k += n;
    }
    return static_cast<double>(loss.item());
  };
  LbfgsConfig lc;
  lc.max_iter = cfg.steps;
  lc.history = cfg.lbfgs_history;
  auto res = lbfgs_minimize(f, flatten(params), lc);
  unflatten(params, res.x);
  MinimizeResult r;
  r.trace = res.trace;
  r.initial = res.f_initial;
  r.final = res.f_final;
  r.line_search_failed = res.line_search_failed;
  return r;
}

// Copy of the state with every parameter frozen, so engines never write
// gradients into (or share graph nodes with) the caller's weights.
GeneratorState frozen_copy(const GeneratorState& state) {
  GeneratorState s = state.clone();
  set_trainable(s.params(), false);
  s.latents.set_requires_grad(false);
  return s;
}

}  // namespace

MinimizeResult minimize(const ParamList& params, const std::function<Tensor()>& objective, const OptimConfig& cfg) {
  cfg.validate();
  for (const auto& p : params) {
    if (!p.tensor->is_leaf() || !p.tensor->requires_grad()) {
      throw UsageError("minimize: " + p.name + " is not a trainable leaf");
    }
  }
  return cfg.method == OptimMethod::Adam ? minimize_adam(params, objective, cfg)
                                         : minimize_lbfgs(params, objective, cfg);
}

Tensor image_objective(const Tensor& x, const Tensor& y, const OptimConfig& cfg, const LossProxies& proxies) {
  Tensor l = scale(loss_l2(x, y), static_cast<float>(cfg.l2_weight));
  if (cfg.perceptual_weight != 0) {
    l = add(l, scale(loss_perceptual(x, y, proxies.perceptual), static_cast<float>(cfg.perceptual_weight)));
  }
  return l;
}

WPlusResult optimize_wplus(const Tensor& x, const Camera& cam, const GeneratorState& state,
                           const LossProxies& proxies, const OptimConfig& cfg) {
  const GeneratorState g = frozen_copy(state);
  WPlusResult r;
  r.w = state.w_bar.detach();
  r.w.set_requires_grad(true);
  const SampleSpec spec{Sampling::Midpoint, cfg.seed};
  r.opt = minimize({{"w", &r.w}},
                   [&] { return image_objective(x, g.render_latent(r.w, cam, spec).image, cfg, proxies); }, cfg);
  NoGradGuard no_grad;
  r.image = g.render_latent(r.w, cam, spec).image;
  r.w = r.w.detach();
  return r;
}

PtiResult finetune_generator_pti(const Tensor& x, const Camera& cam, const Tensor& w_pivot,
                                 const GeneratorState& state, const LossProxies& proxies, const OptimConfig& cfg) {
  PtiResult r;
  r.tuned = std::make_shared<GeneratorState>(frozen_copy(state));
  GeneratorState& g = *r.tuned;
  const ParamList trainable = concat_params({g.gen.synthesis_params("gen"), g.render.params("render")});
  set_trainable(trainable, true);
  const Tensor w = w_pivot.detach();
  const SampleSpec spec{Sampling::Midpoint, cfg.seed};
  r.opt = minimize(trainable, [&] { return image_objective(x, g.render_latent(w, cam, spec).image, cfg, proxies); },
                   cfg);
  set_trainable(trainable, false);
  NoGradGuard no_grad;
  r.image = g.render_latent(w, cam, spec).image;
  return r;
}

TriplaneOptResult optimize_triplane_offsets(const Tensor& x, const Camera& cam, const TriPlane& base,
                                            const Tensor& y_hat, const GeneratorState& state,
                                            const LossProxies& proxies, const OptimConfig& cfg) {
  const GeneratorState g = frozen_copy(state);
  const TriPlane t(base.planes().detach(), base.bound());
  const Tensor target = y_hat.detach();
  TriplaneOptResult r;
  r.delta = TriPlane(Tensor::zeros(t.planes().shape(), true), t.bound());
  const SampleSpec spec{Sampling::Midpoint, cfg.seed};
  auto objective = [&] {
    Tensor y = render(apply_offsets(t, r.delta), g.render, cam, g.render_cfg, spec).image;
    Tensor l = image_objective(x, y, cfg, proxies);
    if (cfg.reg_weight != 0) {
      l = add(l, scale(image_objective(y, target, cfg, proxies), static_cast<float>(cfg.reg_weight)));
    }
    return l;
  };
  r.opt = minimize({{"delta", &r.delta.planes()}}, objective, cfg);
  NoGradGuard no_grad;
  r.image = render(apply_offsets(t, r.delta), g.render, cam, g.render_cfg, spec).image;
  r.delta = TriPlane(r.delta.planes().detach(), t.bound());
  return r;
}

namespace {

struct MethodInfo {
  Method method;
  const char* name;
};

constexpr MethodInfo kMethods[] = {
    {Method::WPlus, "wplus"},
    {Method::Pti, "pti"},
    {Method::WPlusTriplaneOpt, "wplus+triplane_opt"},
    {Method::Encoder, "encoder"},
    {Method::EncoderPti, "encoder+pti"},
    {Method::EncoderTriplaneOpt, "encoder+triplane_opt"},
    {Method::EncoderCttr, "encoder+cttr"},
    {Method::Psp, "psp"},
};

}  // namespace

std::string method_name(Method m) {
  for (const auto& i : kMethods) {
    if (i.method == m) return i.name;
  }
  return "unknown";
}

Method parse_method(const std::string& name) {
  for (const auto& i : kMethods) {
    if (name == i.name) return i.method;
  }
  throw UsageError("unknown inversion method '" + name + "'");
}

const std::vector<Method>& compared_methods() {
  static const std::vector<Method> v{Method::WPlus,   Method::Pti,        Method::WPlusTriplaneOpt,
                                     Method::Encoder, Method::EncoderPti, Method::EncoderTriplaneOpt,
                                     Method::EncoderCttr};
  return v;
}

bool needs_encoders(Method m) {
  return m != Method::WPlus && m != Method::Pti && m != Method::WPlusTriplaneOpt;
}

namespace {

InversionResult wplus_stage(const Tensor& x, const Camera& cam, const InversionModels& m, const EngineConfig& cfg) {
  const auto t0 = Clock::now();
  auto w = optimize_wplus(x, cam, *m.state, *m.proxies, cfg.wplus);
  InversionResult r;
  r.w_hat = w.w;
  {
    NoGradGuard no_grad;
    r.base = synthesize_triplanes(r.w_hat, m.state->gen);
  }
  r.y_initial = w.image;
  r.y_final = w.image;
  r.stage_losses.emplace_back("wplus", w.opt.final);
  r.stage_seconds.emplace_back("wplus", seconds_since(t0));
  return r;
}

InversionResult encoder_stage(const Tensor& x, const Camera& cam, const InversionModels& m, bool second_branch) {
  NoGradGuard no_grad;
  const auto t0 = Clock::now();
  InversionResult r;
  if (second_branch) {
    r = invert_forward(x, cam, *m.phi, *m.psi, *m.state);
  } else {
    r.w_hat = encode_latent(x, *m.phi, m.state->w_bar);
    r.base = synthesize_triplanes(r.w_hat, m.state->gen);
    r.y_initial = render(r.base, m.state->render, cam, m.state->render_cfg).image;
    r.y_final = r.y_initial;
  }
  r.stage_losses.emplace_back("encoder", image_objective(x, r.y_final, wplus_defaults(), *m.proxies).item());
  r.stage_seconds.emplace_back("encoder", seconds_since(t0));
  return r;
}

void pti_stage(const Tensor& x, const Camera& cam, const InversionModels& m, const EngineConfig& cfg,
               InversionResult& r) {
  const auto t0 = Clock::now();
  auto p = finetune_generator_pti(x, cam, r.w_hat, *m.state, *m.proxies, cfg.pti);
  r.tuned = p.tuned;
  {
    NoGradGuard no_grad;
    r.base = synthesize_triplanes(r.w_hat, r.tuned->gen);
  }
  r.y_final = p.image;
  r.stage_losses.emplace_back("pti", p.opt.final);
  r.stage_seconds.emplace_back("pti", seconds_since(t0));
}

void triplane_stage(const Tensor& x, const Camera& cam, const InversionModels& m, const EngineConfig& cfg,
                    InversionResult& r) {
  const auto t0 = Clock::now();
  auto t = optimize_triplane_offsets(x, cam, r.base, r.y_initial, *m.state, *m.proxies, cfg.triplane);
  r.delta = t.delta;
  r.y_final = t.image;
  r.stage_losses.emplace_back("triplane_opt", t.opt.final);
  r.stage_seconds.emplace_back("triplane_opt", seconds_since(t0));
}

}  // namespace

InversionResult run_inversion(const Tensor& x, const Camera& cam, Method method, const InversionModels& models,
                              const EngineConfig& cfg, const InversionResult* cached_wplus) {
  if (!models.state || !models.proxies) throw ConfigurationError("inversion needs a generator state and loss proxies");
  if (needs_encoders(method) && !models.phi) {
    throw ConfigurationError("method " + method_name(method) + " needs a trained latent encoder");
  }
  const bool second_branch = method == Method::Encoder || method == Method::EncoderCttr;
  if (second_branch && !models.psi) {
    throw ConfigurationError("method " + method_name(method) + " needs a trained offset network");
  }
  auto first = [&] { return cached_wplus ? *cached_wplus : wplus_stage(x, cam, models, cfg); };
  InversionResult r;
  switch (method) {
    case Method::WPlus:
      r = first();
      break;
    case Method::Pti:
      r = first();
      pti_stage(x, cam, models, cfg, r);
      break;
    case Method::WPlusTriplaneOpt:
      r = first();
      triplane_stage(x, cam, models, cfg, r);
      break;
    case Method::Psp:
      r = encoder_stage(x, cam, models, false);
      break;
    case Method::Encoder:
      r = encoder_stage(x, cam, models, true);
      break;
    case Method::EncoderPti:
      r = encoder_stage(x, cam, models, false);
      pti_stage(x, cam, models, cfg, r);
      break;
    case Method::EncoderTriplaneOpt:
      r = encoder_stage(x, cam, models, false);
      triplane_stage(x, cam, models, cfg, r);
      break;
    case Method::EncoderCttr: {
      r = encoder_stage(x, cam, models, true);
      NoGradGuard no_grad;
      const auto t0 = Clock::now();
      cttr_refine(x, cam, r, *models.psi, *models.state, cfg.cttr_rounds);
      r.stage_seconds.emplace_back("cttr", seconds_since(t0));
      break;
    }
  }
  return r;
}

TriPlane final_triplane(const InversionResult& r) {
  return r.delta.planes().defined() ? apply_offsets(r.base, r.delta) : r.base;
}

Tensor render_result(const InversionResult& r, const GeneratorState& state, const Camera& cam) {
  NoGradGuard no_grad;
  const GeneratorState& g = r.tuned ? *r.tuned : state;
  return render(final_triplane(r), g.render, cam, g.render_cfg).image;
}

double total_seconds(const InversionResult& r) {
  double s = 0;
  for (const auto& [name, t] : r.stage_seconds) s += t;
  return s;
}

std::vector<EvalCase> make_eval_cases(const EvalConfig& cfg) {
  if (cfg.n_scenes < 1) throw UsageError("eval: need at least one scene");
  std::vector<EvalCase> out;
  for (int i = 0; i < cfg.n_scenes; ++i) {
    const uint64_t s = cfg.seed * 0x9e3779b97f4a7c15ULL + 0x65766131ULL * static_cast<uint64_t>(i + 1);
    EvalCase c;
    c.scene = make_scene(s);
    Rng rng(s ^ 0x63616d657261ULL);
    c.camera = sample_pose(rng, cfg.input_pose);
    c.image = quantize_image(render_scene_oracle(c.scene, c.camera, cfg.oracle));
    out.push_back(std::move(c));
  }
  return out;
}

const EvalRow& EvalReport::row(const std::string& method) const {
  for (const auto& r : rows) {
    if (r.method == method) return r;
  }
  throw UsageError("report has no row for method '" + method + "'");
}

namespace {

void accumulate(ViewMetrics& acc, const ViewMetrics& v) {
  acc.l2 += v.l2;
  acc.psnr += v.psnr;
  acc.ms_ssim += v.ms_ssim;
  acc.id += v.id;
}

void divide(ViewMetrics& acc, double n) {
  acc.l2 /= n;
  acc.psnr /= n;
  acc.ms_ssim /= n;
  acc.id /= n;
}

}  // namespace

EvalReport run_eval(const std::vector<Method>& methods, const InversionModels& models, const EngineConfig& engine,
                    const EvalConfig& cfg, const EvalProgress& progress) {
  const auto cases = make_eval_cases(cfg);
  EvalReport report;
  report.seed = cfg.seed;
  report.n_scenes = cfg.n_scenes;
  report.yaw_offsets = cfg.yaw_offsets;
  for (Method m : methods) {
    EvalRow row;
    row.method = method_name(m);
    row.novel.resize(cfg.yaw_offsets.size());
    for (std::size_t k = 0; k < cfg.yaw_offsets.size(); ++k) row.novel[k].yaw_offset = cfg.yaw_offsets[k];
    report.rows.push_back(std::move(row));
  }
  const bool any_wplus = std::any_of(methods.begin(), methods.end(), [](Method m) { return !needs_encoders(m); });
  for (std::size_t c = 0; c < cases.size(); ++c) {
    const auto& ec = cases[c];
    InversionResult cached;
    if (any_wplus) cached = run_inversion(ec.image, ec.camera, Method::WPlus, models, engine);
    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
      if (progress) progress(report.rows[mi].method, static_cast<int>(c), cfg.n_scenes);
      const Method m = methods[mi];
      const auto r = run_inversion(ec.image, ec.camera, m, models, engine, needs_encoders(m) ? nullptr : &cached);
      EvalRow& row = report.rows[mi];
      const Tensor same = render_result(r, *models.state, ec.camera);
      const ViewMetrics sv{0.0, metric_mse(same, ec.image), metric_psnr(same, ec.image),
                           metric_ms_ssim(same, ec.image, ms_ssim_levels(same.dim(1), same.dim(2))), metric_id(same, ec.image, models.proxies->identity)};
      accumulate(row.same_view, sv);
      row.scene_psnr.push_back(sv.psnr);
      const auto views = eval_novel_views([&](const Camera& cam) { return render_result(r, *models.state, cam); },
                                          ec.scene, ec.camera, cfg.yaw_offsets, cfg.oracle, models.proxies->identity);
      for (std::size_t k = 0; k < views.size(); ++k) accumulate(row.novel[k], views[k]);
      row.seconds += total_seconds(r);
    }
  }
  const double n = static_cast<double>(cases.size());
  for (auto& row : report.rows) {
    divide(row.same_view, n);
    row.seconds /= n;
    for (auto& v : row.novel) {
      divide(v, n);
      accumulate(row.novel_average, v);
    }
    divide(row.novel_average, static_cast<double>(std::max<std::size_t>(row.novel.size(), 1)));
  }
  return report;
}

}  // namespace tpn

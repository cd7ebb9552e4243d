#include "tpn/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>

#include "tpn/checkpoint.hpp"
#include "tpn/config.hpp"
#include "tpn/engines.hpp"
#include "tpn/gradcheck.hpp"
#include "tpn/image_io.hpp"
#include "tpn/parallel.hpp"
#include "tpn/report.hpp"
#include "tpn/training.hpp"

namespace tpn {

namespace {

struct Globals {
  std::string config;
  uint64_t seed = 1;
  int threads = 0;
};

struct GenDataOpts {
  std::string out;
  int scenes = 64;
  int views = 8;
  bool mirror = true;
  int oracle_samples = 128;
};

struct TrainGenOpts {
  std::string data, out;
  GeneratorFitConfig fit;
  int log_every = 100;
};

struct TrainEncOpts {
  std::string data, generator, out;
  TrainSchedule schedule;
  int log_every = 100;
};

struct InvertOpts {
  std::string checkpoint, input, out, method = "encoder+cttr";
  double yaw = 0, pitch = 0;
  int cttr = 1;
  int wplus_steps = 200, pti_steps = 200, triplane_steps = 50;
  std::vector<double> yaw_list = default_yaw_offsets();
};

struct EvalOpts {
  std::string checkpoint, out = "report.jsonl", methods = "all";
  int scenes = 32;
  uint64_t eval_seed = 1000;
  int cttr = 1;
  int wplus_steps = 200, pti_steps = 200, triplane_steps = 50;
  std::vector<double> yaw_list = default_yaw_offsets();
};

void log_line(const std::string& s) { std::cerr << s << std::endl; }

// Values from the config file for options the command line left unset.
// "<subcommand>.<option>" takes precedence over a bare "<option>".
void apply_config(CLI::App& app, CLI::App* sub, const ConfigFile& cfg) {
  std::set<std::string> known{"config"};
  auto names = [](CLI::Option* o) { return o->get_lnames(); };
  for (auto* o : app.get_options()) {
    for (const auto& n : names(o)) known.insert(n);
  }
  for (auto* s : app.get_subcommands({})) {
    for (auto* o : s->get_options()) {
      for (const auto& n : names(o)) {
        known.insert(n);
        known.insert(s->get_name() + "." + n);
      }
    }
  }
  for (const auto& [key, value] : cfg.values) {
    if (!known.count(key)) throw UsageError(cfg.source + ": unknown key '" + key + "'");
  }
  auto fill = [&](CLI::App* a, const std::string& prefix) {
    for (auto* o : a->get_options()) {
      if (o->count() != 0) continue;
      for (const auto& n : names(o)) {
        const std::string* v = nullptr;
        if (!prefix.empty() && cfg.has(prefix + "." + n)) v = &cfg.values.at(prefix + "." + n);
        else if (cfg.has(n)) v = &cfg.values.at(n);
        if (!v || n == "config") continue;
        o->add_result(*v);
        o->run_callback();
        break;
      }
    }
  };
  fill(&app, "");
  if (sub) fill(sub, sub->get_name());
}

Camera input_camera(double yaw, double pitch) {
  Camera c;
  c.yaw = yaw;
  c.pitch = pitch;
  c.validate();
  return c;
}

EngineConfig engine_config(int wplus_steps, int pti_steps, int triplane_steps, int cttr, uint64_t seed) {
  EngineConfig e;
  e.wplus.steps = wplus_steps;
  e.pti.steps = pti_steps;
  e.triplane.steps = triplane_steps;
  e.wplus.seed = e.pti.seed = e.triplane.seed = seed;
  e.cttr_rounds = cttr;
  return e;
}

std::vector<Method> parse_methods(const std::string& list) {
  if (list == "all") return compared_methods();
  std::vector<Method> out;
  std::size_t pos = 0;
  while (pos <= list.size()) {
    auto end = list.find(',', pos);
    if (end == std::string::npos) end = list.size();
    out.push_back(parse_method(list.substr(pos, end - pos)));
    pos = end + 1;
  }
  return out;
}

ModelBundle require_checkpoint(const std::string& path) {
  if (path.empty() || !std::filesystem::exists(path)) {
    throw ConfigurationError("no trained checkpoint at '" + path + "' (run train-generator / train-encoders first)");
  }
  return load_checkpoint(path);
}

InversionModels models_of(const ModelBundle& b, const LossProxies& proxies) {
  InversionModels m;
  m.state = &b.state;
  m.phi = b.phi ? &*b.phi : nullptr;
  m.psi = b.psi ? &*b.psi : nullptr;
  m.proxies = &proxies;
  return m;
}

int cmd_gen_data(const GenDataOpts& o, const Globals& g) {
  OracleConfig oracle;
  oracle.n_samples = o.oracle_samples;
  const auto data = build_dataset(o.scenes, o.views, o.mirror, g.seed, oracle);
  save_dataset(data, o.out);
  std::cout << "wrote " << data.samples.size() << " views of " << data.scenes.size() << " scenes to " << o.out << "\n";
  return kExitOk;
}

int cmd_train_generator(TrainGenOpts o, const Globals& g) {
  const auto data = load_dataset(o.data);
  o.fit.seed = g.seed;
  const auto proxies = LossProxies::create();
  auto res = fit_autodecoder(data, o.fit, proxies, [&](int step, double loss) {
    if (o.log_every > 0 && (step % o.log_every == 0 || step + 1 == o.fit.steps)) {
      log_line("train-generator step " + std::to_string(step) + " loss " + std::to_string(loss));
    }
  });
  save_checkpoint({res.state, std::nullopt, std::nullopt}, o.out);
  std::ofstream trace(o.out + ".losses.txt");
  for (double l : res.losses) trace << l << "\n";
  std::cout << "train-view PSNR " << train_view_psnr(res.state, data) << " dB; checkpoint " << o.out << "\n";
  return kExitOk;
}

int cmd_train_encoders(TrainEncOpts o, const Globals& g) {
  const auto data = load_dataset(o.data);
  const auto gen = require_checkpoint(o.generator);
  o.schedule.seed = g.seed;
  const auto proxies = LossProxies::create();
  auto res = train_encoders(gen.state, data, o.schedule, LossWeights{}, proxies, EncoderConfig{},
                            [&](int step, double loss) {
                              if (o.log_every > 0 && (step % o.log_every == 0 || step + 1 == o.schedule.total_steps)) {
                                log_line("train-encoders step " + std::to_string(step) + " loss " +
                                         std::to_string(loss));
                              }
                            });
  save_checkpoint({gen.state, res.phi, res.psi}, o.out);
  std::ofstream trace(o.out + ".losses.txt");
  trace << "phi psi total\n";
  for (std::size_t i = 0; i < res.loss_total.size(); ++i) {
    trace << res.loss_phi[i] << " " << res.loss_psi[i] << " " << res.loss_total[i] << "\n";
  }
  std::cout << "checkpoint " << o.out << "\n";
  return kExitOk;
}

InversionResult invert_input(const InvertOpts& o, const Globals& g, const ModelBundle& b, const LossProxies& p,
                             const Tensor& x) {
  const auto method = parse_method(o.method);
  if (o.cttr < 0) throw UsageError("--cttr must be >= 0");
  return run_inversion(x, input_camera(o.yaw, o.pitch), method, models_of(b, p),
                       engine_config(o.wplus_steps, o.pti_steps, o.triplane_steps, o.cttr, g.seed));
}

Tensor load_input(const std::string& path, const ModelBundle& b) {
  Tensor x = read_png(path);
  const int res = b.state.render_cfg.final_res;
  if (x.dim(1) != res || x.dim(2) != res) {
    throw DimensionError("input image must be " + std::to_string(res) + "x" + std::to_string(res));
  }
  return x;
}

int cmd_invert(const InvertOpts& o, const Globals& g) {
  parse_method(o.method);
  const auto b = require_checkpoint(o.checkpoint);
  const auto proxies = LossProxies::create();
  const Tensor x = load_input(o.input, b);
  const auto r = invert_input(o, g, b, proxies, x);
  write_png(r.y_final, o.out);
  std::cout << o.method << ": PSNR " << metric_psnr(r.y_final, x) << " dB, " << total_seconds(r) << " s -> " << o.out
            << "\n";
  return kExitOk;
}

int cmd_render_sweep(const InvertOpts& o, const Globals& g) {
  parse_method(o.method);
  const auto b = require_checkpoint(o.checkpoint);
  const auto proxies = LossProxies::create();
  const Tensor x = load_input(o.input, b);
  const auto r = invert_input(o, g, b, proxies, x);
  std::filesystem::create_directories(o.out);
  for (double off : o.yaw_list) {
    Camera cam = input_camera(o.yaw, o.pitch);
    cam.yaw += off;
    char name[64];
    std::snprintf(name, sizeof name, "yaw_%+.2f.png", off);
    write_png(render_result(r, b.state, cam), std::filesystem::path(o.out) / name);
  }
  std::cout << "wrote " << o.yaw_list.size() << " views to " << o.out << "\n";
  return kExitOk;
}

int cmd_eval(const EvalOpts& o, const Globals& g) {
  const auto methods = parse_methods(o.methods);
  const auto b = require_checkpoint(o.checkpoint);
  const auto proxies = LossProxies::create();
  EvalConfig ec;
  ec.n_scenes = o.scenes;
  ec.seed = o.eval_seed;
  ec.yaw_offsets = o.yaw_list;
  const auto report = run_eval(methods, models_of(b, proxies),
                               engine_config(o.wplus_steps, o.pti_steps, o.triplane_steps, o.cttr, g.seed), ec,
                               [](const std::string& m, int scene, int n) {
                                 log_line("eval " + m + " scene " + std::to_string(scene + 1) + "/" + std::to_string(n));
                               });
  write_report(report, o.out);
  std::cout << report_table(report);
  return kExitOk;
}

int cmd_gradcheck(int instances, const Globals& g) {
  const auto results = run_gradcheck_suite(instances, g.seed);
  bool ok = true;
  for (const auto& r : results) {
    std::printf("%-26s max rel err %.3e (tol %.0e) %s\n", r.name.c_str(), r.max_rel_error, r.tolerance,
                r.passed() ? "ok" : "FAIL");
    ok = ok && r.passed();
  }
  return ok ? kExitOk : kExitData;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Tri-plane GAN inversion toolkit (desk scale)", "tpn"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "flat key = value configuration file");
  app.add_option("--seed", g.seed, "global seed");
  app.add_option("--threads", g.threads, "worker threads for rendering (0 = hardware)")->check(CLI::NonNegativeNumber);

  GenDataOpts gd;
  auto* gen_data = app.add_subcommand("gen-data", "render the synthetic scene dataset");
  gen_data->add_option("--out", gd.out, "output directory")->required();
  gen_data->add_option("--scenes", gd.scenes)->check(CLI::PositiveNumber);
  gen_data->add_option("--views", gd.views, "views per scene")->check(CLI::PositiveNumber);
  gen_data->add_option("--mirror", gd.mirror, "add left-right mirrored copies");
  gen_data->add_option("--oracle-samples", gd.oracle_samples)->check(CLI::PositiveNumber);

  TrainGenOpts tg;
  auto* train_gen = app.add_subcommand("train-generator", "fit the generator to a dataset by auto-decoding");
  train_gen->add_option("--data", tg.data)->required();
  train_gen->add_option("--out", tg.out, "checkpoint path")->required();
  train_gen->add_option("--steps", tg.fit.steps)->check(CLI::NonNegativeNumber);
  train_gen->add_option("--batch", tg.fit.batch)->check(CLI::PositiveNumber);
  train_gen->add_option("--lr", tg.fit.lr);
  train_gen->add_option("--latent-lr", tg.fit.latent_lr);
  train_gen->add_option("--raw-weight", tg.fit.raw_weight);
  train_gen->add_option("--perceptual-weight", tg.fit.perceptual_weight);
  train_gen->add_option("--latent-reg", tg.fit.latent_reg);
  train_gen->add_option("--log-every", tg.log_every);

  TrainEncOpts te;
  auto* train_enc = app.add_subcommand("train-encoders", "train both inversion branches");
  train_enc->add_option("--data", te.data)->required();
  train_enc->add_option("--generator", te.generator, "generator checkpoint")->required();
  train_enc->add_option("--out", te.out, "checkpoint path")->required();
  train_enc->add_option("--steps", te.schedule.total_steps)->check(CLI::NonNegativeNumber);
  train_enc->add_option("--second-branch-start", te.schedule.second_branch_start);
  train_enc->add_option("--first-branch-freeze", te.schedule.first_branch_freeze);
  train_enc->add_option("--batch", te.schedule.batch)->check(CLI::PositiveNumber);
  train_enc->add_option("--lr", te.schedule.lr);
  train_enc->add_option("--generated-fraction", te.schedule.generated_fraction)->check(CLI::Range(0.0, 1.0));
  train_enc->add_option("--log-every", te.log_every);

  InvertOpts inv;
  auto add_invert_opts = [](CLI::App* a, InvertOpts& o) {
    a->add_option("--checkpoint", o.checkpoint)->required();
    a->add_option("--input", o.input, "PNG image")->required();
    a->add_option("--out", o.out)->required();
    a->add_option("--method", o.method, "wplus|pti|wplus+triplane_opt|encoder|encoder+pti|encoder+triplane_opt|"
                                        "encoder+cttr|psp");
    a->add_option("--yaw", o.yaw, "camera yaw of the input (rad)");
    a->add_option("--pitch", o.pitch, "camera pitch of the input (rad)");
    a->add_option("--cttr", o.cttr, "test-time refinement rounds");
    a->add_option("--wplus-steps", o.wplus_steps)->check(CLI::PositiveNumber);
    a->add_option("--pti-steps", o.pti_steps)->check(CLI::PositiveNumber);
    a->add_option("--triplane-steps", o.triplane_steps)->check(CLI::PositiveNumber);
  };
  auto* invert = app.add_subcommand("invert", "invert one image and write the reconstruction");
  add_invert_opts(invert, inv);
  InvertOpts sweep;
  auto* render_sweep = app.add_subcommand("render-sweep", "invert one image and render novel views");
  add_invert_opts(render_sweep, sweep);
  render_sweep->add_option("--yaw-list", sweep.yaw_list, "yaw offsets (rad)")->delimiter(',');

  EvalOpts ev;
  auto* eval = app.add_subcommand("eval", "compare inversion methods on held-out scenes");
  eval->add_option("--checkpoint", ev.checkpoint);
  eval->add_option("--methods", ev.methods, "comma-separated list or 'all'");
  eval->add_option("--scenes", ev.scenes)->check(CLI::PositiveNumber);
  eval->add_option("--out", ev.out, "JSON-lines report path");
  eval->add_option("--eval-seed", ev.eval_seed);
  eval->add_option("--cttr", ev.cttr);
  eval->add_option("--yaw-list", ev.yaw_list)->delimiter(',');
  eval->add_option("--wplus-steps", ev.wplus_steps)->check(CLI::PositiveNumber);
  eval->add_option("--pti-steps", ev.pti_steps)->check(CLI::PositiveNumber);
  eval->add_option("--triplane-steps", ev.triplane_steps)->check(CLI::PositiveNumber);

  int instances = 3;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
  gradcheck->add_option("--instances", instances)->check(CLI::PositiveNumber);

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    CLI::App* sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front();
    if (!g.config.empty()) apply_config(app, sub, load_config(g.config));
    if (g.threads > 0) set_num_threads(g.threads);
    if (sub == gen_data) return cmd_gen_data(gd, g);
    if (sub == train_gen) return cmd_train_generator(tg, g);
    if (sub == train_enc) return cmd_train_encoders(te, g);
    if (sub == invert) return cmd_invert(inv, g);
    if (sub == render_sweep) return cmd_render_sweep(sweep, g);
    if (sub == eval) return cmd_eval(ev, g);
    if (sub == gradcheck) return cmd_gradcheck(instances, g);
    return kExitUsage;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args);
}

}  // namespace tpn

#include "tpn/scenes.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "tpn/generator.hpp"
#include "tpn/image_io.hpp"
#include "tpn/parallel.hpp"

namespace tpn {

namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

SceneSpec make_scene(uint64_t seed) {
  Rng rng(splitmix64(seed));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> count(1, 3);
  SceneSpec s;
  s.seed = seed;
  const int n = count(rng);
  for (int i = 0; i < n; ++i) {
    Blob b;
    do {
      b.center = {u(rng) - 0.5, u(rng) - 0.5, u(rng) - 0.5};
    } while (norm(b.center) > 0.5);
    b.scale = 0.1 + 0.15 * u(rng);
    b.amplitude = 20 + 40 * u(rng);
    b.color = {u(rng), u(rng), u(rng)};
    s.blobs.push_back(b);
  }
  return s;
}

SceneSpec mirror_scene(const SceneSpec& scene) {
  SceneSpec out = scene;
  for (auto& b : out.blobs) b.center.x = -b.center.x;
  return out;
}

void scene_field(const SceneSpec& scene, std::span<const float> points, std::span<float> sigma,
                 std::span<float> color) {
  const std::size_t n = sigma.size();
  if (points.size() != 3 * n || color.size() != 3 * n) throw DimensionError("scene_field: buffer sizes");
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 p{points[3 * i], points[3 * i + 1], points[3 * i + 2]};
    double total = 0, rgb[3] = {0, 0, 0};
    for (const auto& b : scene.blobs) {
      const Vec3 d = p - b.center;
      const double dens = b.amplitude * std::exp(-dot(d, d) / (2 * b.scale * b.scale));
      total += dens;
      for (int c = 0; c < 3; ++c) rgb[c] += dens * b.color[c];
    }
    sigma[i] = static_cast<float>(total);
    for (int c = 0; c < 3; ++c) color[3 * i + c] = total > 0 ? static_cast<float>(rgb[c] / total) : 0.0f;
  }
}

Tensor render_scene_oracle(const SceneSpec& scene, const Camera& cam, const OracleConfig& cfg) {
  const auto samples = make_ray_samples(cam, cfg.resolution, cfg.n_samples, cfg.bound);
  const int64_t r = samples.rays, s = samples.samples;
  std::vector<float> sigma(static_cast<std::size_t>(r * s)), color(static_cast<std::size_t>(r * s * 3));
  scene_field(scene, samples.points.data(), sigma, color);
  const auto deltas = samples.deltas.data();
  std::vector<float> img(static_cast<std::size_t>(3 * r));
  for (int64_t k = 0; k < r; ++k) {
    const auto span = [&](const std::vector<float>& v, int64_t width) {
      return std::span<const float>(v.data() + k * s * width, static_cast<std::size_t>(s * width));
    };
    const auto res = composite<float>(span(sigma, 1), span(color, 3), 3, deltas.subspan(k * s, s));
    for (int c = 0; c < 3; ++c) img[static_cast<std::size_t>(c * r + k)] = res.color[c];
  }
  return Tensor::from({3, cfg.resolution, cfg.resolution}, std::move(img));
}

Camera sample_pose(Rng& rng, const PoseRange& range) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Camera cam;
  cam.yaw = range.yaw_max * u(rng);
  cam.pitch = range.pitch_max * u(rng);
  return cam;
}

Tensor flip_horizontal(const Tensor& image) {
  if (image.rank() != 3) throw DimensionError("flip_horizontal: expected [C,H,W]");
  const int64_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const auto src = image.data();
  std::vector<float> out(src.size());
  for (int64_t i = 0; i < c * h; ++i) {
    for (int64_t x = 0; x < w; ++x) out[i * w + x] = src[i * w + (w - 1 - x)];
  }
  return Tensor::from(image.shape(), std::move(out));
}

PosedImage mirror(const PosedImage& sample) {
  PosedImage out = sample;
  out.image = flip_horizontal(sample.image);
  out.camera.yaw = -sample.camera.yaw;
  out.camera.look_at.x = -sample.camera.look_at.x;
  out.mirrored = !sample.mirrored;
  return out;
}

const PosedImage& Dataset::anchor_view(int64_t scene_id) const {
  const PosedImage* best = nullptr;
  for (const auto& s : samples) {
    if (s.scene_id != scene_id || s.mirrored) continue;
    if (!best || std::abs(s.camera.yaw) < std::abs(best->camera.yaw)) best = &s;
  }
  if (!best) throw UsageError("dataset has no views of scene " + std::to_string(scene_id));
  return *best;
}

Dataset build_dataset(int n_scenes, int views_per_scene, bool mirror_flag, uint64_t seed,
                      const OracleConfig& oracle) {
  if (n_scenes < 1 || views_per_scene < 1) throw UsageError("build_dataset: need at least one scene and view");
  Dataset d;
  d.views_per_scene = views_per_scene;
  d.mirrored = mirror_flag;
  d.seed = seed;
  d.oracle = oracle;
  d.scenes.resize(static_cast<std::size_t>(n_scenes));
  const int per = views_per_scene * (mirror_flag ? 2 : 1);
  d.samples.resize(static_cast<std::size_t>(n_scenes) * per);
  parallel_chunks(n_scenes, 1, [&](int64_t, int64_t b, int64_t e) {
    for (int64_t i = b; i < e; ++i) {
      const uint64_t scene_seed = splitmix64(seed * 0x100000001b3ULL + static_cast<uint64_t>(i));
      d.scenes[i] = make_scene(scene_seed);
      Rng rng(splitmix64(scene_seed ^ 0x706f736573ULL));
      std::vector<Camera> cams;
      bool frontal = false;
      while (!frontal) {
        cams.clear();
        for (int v = 0; v < views_per_scene; ++v) {
          cams.push_back(sample_pose(rng, PoseRange{}));
          frontal = frontal || std::abs(cams.back().yaw) < 0.3;
        }
      }
      for (int v = 0; v < views_per_scene; ++v) {
        PosedImage& s = d.samples[static_cast<std::size_t>(i * per + v)];
        s.image = quantize_image(render_scene_oracle(d.scenes[i], cams[v], oracle));
        s.camera = cams[v];
        s.scene_id = i;
        if (mirror_flag) d.samples[static_cast<std::size_t>(i * per + views_per_scene + v)] = mirror(s);
      }
    }
  });
  return d;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string image_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu.png", i);
  return buf;
}

}  // namespace

void save_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  std::ofstream meta(dir / "metadata.txt");
  if (!meta) throw FormatError("save_dataset: cannot write " + (dir / "metadata.txt").string());
  meta << "tpn-dataset 1\n";
  meta << "seed " << data.seed << "\n";
  meta << "views_per_scene " << data.views_per_scene << "\n";
  meta << "mirrored " << (data.mirrored ? 1 : 0) << "\n";
  meta << "oracle " << data.oracle.resolution << " " << data.oracle.n_samples << " " << fmt(data.oracle.bound)
       << "\n";
  meta << "scenes " << data.scenes.size() << "\n";
  for (std::size_t i = 0; i < data.scenes.size(); ++i) {
    const auto& s = data.scenes[i];
    meta << "scene " << i << " " << s.seed << " " << s.blobs.size();
    for (const auto& b : s.blobs) {
      meta << " " << fmt(b.center.x) << " " << fmt(b.center.y) << " " << fmt(b.center.z) << " " << fmt(b.scale)
           << " " << fmt(b.amplitude) << " " << fmt(b.color[0]) << " " << fmt(b.color[1]) << " "
           << fmt(b.color[2]);
    }
    meta << "\n";
  }
  meta << "views " << data.samples.size() << "\n";
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const auto& s = data.samples[i];
    const auto name = image_name(i);
    write_png(s.image, dir / "images" / name);
    meta << "view " << i << " " << s.scene_id << " " << (s.mirrored ? 1 : 0) << " " << fmt(s.camera.yaw) << " "
         << fmt(s.camera.pitch) << " " << fmt(s.camera.radius) << " " << fmt(s.camera.fov_y) << " "
         << fmt(s.camera.look_at.x) << " " << fmt(s.camera.look_at.y) << " " << fmt(s.camera.look_at.z)
         << " images/" << name << "\n";
  }
  if (!meta) throw FormatError("save_dataset: write failed");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream meta(dir / "metadata.txt");
  if (!meta) throw FormatError("load_dataset: missing " + (dir / "metadata.txt").string());
  auto expect = [&](const std::string& key) {
    std::string k;
    if (!(meta >> k) || k != key) throw FormatError("load_dataset: expected '" + key + "' in metadata");
  };
  Dataset d;
  int version = 0;
  expect("tpn-dataset");
  meta >> version;
  if (version != 1) throw FormatError("load_dataset: unsupported metadata version");
  int mirrored = 0;
  std::size_t n_scenes = 0, n_views = 0;
  expect("seed");
  meta >> d.seed;
  expect("views_per_scene");
  meta >> d.views_per_scene;
  expect("mirrored");
  meta >> mirrored;
  d.mirrored = mirrored != 0;
  expect("oracle");
  meta >> d.oracle.resolution >> d.oracle.n_samples >> d.oracle.bound;
  expect("scenes");
  meta >> n_scenes;
  if (!meta) throw FormatError("load_dataset: malformed header");
  d.scenes.resize(n_scenes);
  for (std::size_t i = 0; i < n_scenes; ++i) {
    std::size_t idx = 0, nb = 0;
    expect("scene");
    meta >> idx >> d.scenes[i].seed >> nb;
    if (!meta || idx != i || nb > 16) throw FormatError("load_dataset: malformed scene record");
    d.scenes[i].blobs.resize(nb);
    for (auto& b : d.scenes[i].blobs) {
      meta >> b.center.x >> b.center.y >> b.center.z >> b.scale >> b.amplitude >> b.color[0] >> b.color[1] >>
          b.color[2];
    }
  }
  expect("views");
  meta >> n_views;
  if (!meta) throw FormatError("load_dataset: malformed scene records");
  d.samples.resize(n_views);
  for (std::size_t i = 0; i < n_views; ++i) {
    std::size_t idx = 0;
    int mir = 0;
    std::string file;
    auto& s = d.samples[i];
    expect("view");
    meta >> idx >> s.scene_id >> mir >> s.camera.yaw >> s.camera.pitch >> s.camera.radius >> s.camera.fov_y >>
        s.camera.look_at.x >> s.camera.look_at.y >> s.camera.look_at.z >> file;
    if (!meta || idx != i || s.scene_id < 0 || static_cast<std::size_t>(s.scene_id) >= n_scenes) {
      throw FormatError("load_dataset: malformed view record " + std::to_string(i));
    }
    s.mirrored = mir != 0;
    s.image = read_png(dir / file);
  }
  return d;
}

std::vector<PosedImage> sample_generated_training(const GeneratorState& state, int n, double psi_trunc,
                                                  const PoseRange& poses, uint64_t seed) {
  NoGradGuard no_grad;
  Rng rng(splitmix64(seed));
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<PosedImage> out;
  out.reserve(static_cast<std::size_t>(std::max(n, 0)));
  for (int i = 0; i < n; ++i) {
    std::vector<float> z(static_cast<std::size_t>(state.gen.cfg.z_dim));
    for (auto& v : z) v = static_cast<float>(nd(rng));
    PosedImage s;
    s.camera = sample_pose(rng, poses);
    const auto w = map_latent(Tensor::from({1, state.gen.cfg.z_dim}, std::move(z)), s.camera, psi_trunc,
                              state.w_bar, state.gen);
    s.image = state.render_latent(w, s.camera).image.detach();
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace tpn

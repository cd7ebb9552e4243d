#pragma once

// Procedural Gaussian-blob scenes with an analytic renderer. These provide
// multi-view training data and exact ground truth for novel views.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tpn/nn.hpp"
#include "tpn/renderer.hpp"
#include "tpn/tensor.hpp"

namespace tpn {

struct GeneratorState;

struct Blob {
  Vec3 center;
  double scale = 0.1;
  double amplitude = 20;
  std::array<double, 3> color{};
};

struct SceneSpec {
  std::vector<Blob> blobs;
  uint64_t seed = 0;
};

// 1-3 blobs, centers in the ball of radius 0.5, s in [0.1, 0.25],
// a in [20, 60], colors in [0, 1]^3.
SceneSpec make_scene(uint64_t seed);
// Reflection x -> -x.
SceneSpec mirror_scene(const SceneSpec& scene);

// Density and density-weighted color at `n` points (xyz interleaved).
void scene_field(const SceneSpec& scene, std::span<const float> points, std::span<float> sigma,
                 std::span<float> color);

struct OracleConfig {
  int resolution = 64;
  int n_samples = 128;
  double bound = 1.0;
};

// [3, res, res], same sample placement and quadrature as the neural renderer.
Tensor render_scene_oracle(const SceneSpec& scene, const Camera& cam, const OracleConfig& cfg = {});

struct PoseRange {
  double yaw_max = 0.9;
  double pitch_max = 0.3;
};

Camera sample_pose(Rng& rng, const PoseRange& range);

struct PosedImage {
  Tensor image;  // [3, H, W] in [0, 1]
  Camera camera;
  int64_t scene_id = -1;  // -1 for generator samples
  bool mirrored = false;
};

// Left-right flip of a [C, H, W] image.
Tensor flip_horizontal(const Tensor& image);
// Flipped image, negated yaw, toggled mirrored flag.
PosedImage mirror(const PosedImage& sample);

struct Dataset {
  std::vector<SceneSpec> scenes;
  std::vector<PosedImage> samples;  // scene-major; mirrored copies follow the originals
  int views_per_scene = 0;
  bool mirrored = false;
  uint64_t seed = 0;
  OracleConfig oracle;

  // Row in the auto-decoder latent table for a sample.
  int64_t latent_index(const PosedImage& s) const { return mirrored ? 2 * s.scene_id + s.mirrored : s.scene_id; }
  int64_t latent_count() const { return static_cast<int64_t>(scenes.size()) * (mirrored ? 2 : 1); }
  // Unmirrored view of the scene with the smallest |yaw|.
  const PosedImage& anchor_view(int64_t scene_id) const;
};

// Images are quantized to 8 bits so that a dataset reloaded from PNG is
// identical to the one built in memory.
Dataset build_dataset(int n_scenes, int views_per_scene, bool mirror, uint64_t seed, const OracleConfig& oracle = {});

// Directory layout: metadata.txt plus images/NNNNNN.png.
void save_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

// Generator renders at poses drawn from the dataset pose range, which is
// symmetric in yaw and so already contains the mirrored poses. psi_trunc = 1
// disables truncation.
std::vector<PosedImage> sample_generated_training(const GeneratorState& state, int n, double psi_trunc,
                                                  const PoseRange& poses, uint64_t seed);

}  // namespace tpn

#include <filesystem>
#include <set>

#include "helpers.hpp"
#include "tpn/image_io.hpp"
#include "tpn/scenes.hpp"

using namespace tpn;
using namespace tpn::test;

namespace {

bool same_scene(const SceneSpec& a, const SceneSpec& b) {
  if (a.blobs.size() != b.blobs.size() || a.seed != b.seed) return false;
  for (std::size_t i = 0; i < a.blobs.size(); ++i) {
    const auto &x = a.blobs[i], &y = b.blobs[i];
    if (x.center.x != y.center.x || x.center.y != y.center.y || x.center.z != y.center.z || x.scale != y.scale ||
        x.amplitude != y.amplitude || x.color != y.color)
      return false;
  }
  return true;
}

OracleConfig small_oracle() {
  OracleConfig oc;
  oc.resolution = 16;
  oc.n_samples = 32;
  return oc;
}

}  // namespace

TEST_SUITE("scenes") {

TEST_CASE("make_scene ranges and determinism") {
  CHECK(same_scene(make_scene(42), make_scene(42)));
  std::set<std::size_t> counts;
  for (uint64_t seed = 0; seed < 1000; ++seed) {
    const auto s = make_scene(seed);
    counts.insert(s.blobs.size());
    for (const auto& b : s.blobs) {
      CHECK(norm(b.center) <= 0.5);
      CHECK(b.scale >= 0.1);
      CHECK(b.scale <= 0.25);
      CHECK(b.amplitude >= 20);
      CHECK(b.amplitude <= 60);
      for (double c : b.color) CHECK((c >= 0 && c <= 1));
    }
  }
  CHECK(counts == std::set<std::size_t>{1, 2, 3});
}

TEST_CASE("oracle basics") {
  auto scene = make_scene(8);
  for (auto& b : scene.blobs) b.amplitude = 0;
  const auto black = render_scene_oracle(scene, Camera{}, small_oracle());
  for (float v : black.data()) CHECK(v == 0.0f);

  SceneSpec centered;
  centered.blobs.push_back({{0, 0, 0}, 0.2, 60, {0.8, 0.8, 0.8}});
  OracleConfig odd = small_oracle();
  odd.resolution = 15;
  const auto img = render_scene_oracle(centered, Camera{}, odd);
  const float center = img[7 * 15 + 7];
  for (int64_t i = 0; i < 15 * 15; ++i) CHECK(img[i] <= center);
  CHECK(center > 0.5f);

  const auto s = make_scene(9);
  Camera cam;
  cam.yaw = -0.4;
  OracleConfig a = small_oracle(), b = small_oracle();
  a.n_samples = 128;
  b.n_samples = 256;
  CHECK(max_abs_diff(render_scene_oracle(s, cam, a), render_scene_oracle(s, cam, b)) < 1e-2);
}

TEST_CASE("mirroring") {
  const auto scene = make_scene(10);
  Camera cam;
  cam.yaw = 0.37;
  cam.pitch = 0.12;
  Camera neg = cam;
  neg.yaw = -cam.yaw;
  const auto oc = small_oracle();
  const auto lhs = flip_horizontal(render_scene_oracle(scene, cam, oc));
  const auto rhs = render_scene_oracle(mirror_scene(scene), neg, oc);
  CHECK(max_abs_diff(lhs, rhs) <= 1e-5);

  PosedImage s{rand_tensor({3, 8, 8}, 1, 0, 1), cam, 3, false};
  const auto m = mirror(s);
  CHECK(m.camera.yaw == -cam.yaw);
  CHECK(m.mirrored);
  const auto mm = mirror(m);
  CHECK(bit_equal(mm.image, s.image));
  CHECK(mm.camera.yaw == s.camera.yaw);
  CHECK(mm.mirrored == s.mirrored);
}

TEST_CASE("build_dataset") {
  const auto oc = small_oracle();
  const auto d = build_dataset(6, 3, true, 11, oc);
  CHECK(d.samples.size() == 6u * 3 * 2);
  CHECK(build_dataset(6, 3, false, 11, oc).samples.size() == 18u);
  CHECK(d.latent_count() == 12);

  const auto d2 = build_dataset(6, 3, true, 11, oc);
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    CHECK(bit_equal(d.samples[i].image, d2.samples[i].image));
    CHECK(d.samples[i].camera.yaw == d2.samples[i].camera.yaw);
  }
  double yaw_sum = 0;
  for (const auto& s : d.samples) {
    CHECK(std::abs(s.camera.yaw) <= 0.9);
    CHECK(std::abs(s.camera.pitch) <= 0.3);
    yaw_sum += s.camera.yaw;
    // images are already 8-bit values
    CHECK(bit_equal(quantize_image(s.image), s.image));
  }
  CHECK(std::abs(yaw_sum / d.samples.size()) < 1e-12);
  for (int64_t i = 0; i < 6; ++i) {
    CHECK(std::abs(d.anchor_view(i).camera.yaw) < 0.3);
    CHECK_FALSE(d.anchor_view(i).mirrored);
  }
  // mirrored copy of view v is the flipped original
  CHECK(bit_equal(d.samples[3].image, flip_horizontal(d.samples[0].image)));
  CHECK(d.latent_index(d.samples[3]) == 1);
}

TEST_CASE("dataset save and load") {
  const auto dir = std::filesystem::temp_directory_path() / "tpn_test_dataset";
  std::filesystem::remove_all(dir);
  const auto d = build_dataset(3, 2, true, 12, small_oracle());
  save_dataset(d, dir);
  const auto l = load_dataset(dir);
  REQUIRE(l.samples.size() == d.samples.size());
  CHECK(l.mirrored == d.mirrored);
  CHECK(l.views_per_scene == d.views_per_scene);
  for (std::size_t i = 0; i < d.scenes.size(); ++i) CHECK(same_scene(l.scenes[i], d.scenes[i]));
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    CHECK(bit_equal(l.samples[i].image, d.samples[i].image));
    CHECK(l.samples[i].camera.yaw == d.samples[i].camera.yaw);
    CHECK(l.samples[i].camera.pitch == d.samples[i].camera.pitch);
    CHECK(l.samples[i].scene_id == d.samples[i].scene_id);
    CHECK(l.samples[i].mirrored == d.samples[i].mirrored);
  }
  CHECK_THROWS_AS(load_dataset(dir / "missing"), FormatError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("generated training samples") {
  const auto state = tiny_state(4);
  const auto a = sample_generated_training(state, 100, 1.0, PoseRange{}, 13);
  const auto b = sample_generated_training(state, 100, 1.0, PoseRange{}, 13);
  for (int i = 0; i < 100; ++i) CHECK(bit_equal(a[i].image, b[i].image));
  CHECK_FALSE(bit_equal(a[0].image, a[1].image));

  const auto t = sample_generated_training(state, 4, 0.0, PoseRange{}, 14);
  for (const auto& s : t) {
    CHECK(bit_equal(s.image, state.render_latent(state.w_bar, s.camera).image));
    CHECK(s.scene_id == -1);
  }
}

}  // TEST_SUITE

#include "helpers.hpp"
#include "tpn/losses.hpp"
#include "tpn/ops.hpp"
#include "tpn/scenes.hpp"
#include "tpn/training.hpp"

using namespace tpn;
using namespace tpn::test;

namespace {

Tensor random_z(int64_t dim, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> nd(0, 1);
  std::vector<float> v(static_cast<std::size_t>(dim));
  for (auto& x : v) x = nd(rng);
  return Tensor::from({1, dim}, v);
}

}  // namespace

TEST_SUITE("generator") {

TEST_CASE("truncation") {
  const auto s = tiny_state();
  const auto z = random_z(4, 3);
  Camera cam;
  cam.yaw = 0.3;
  const auto raw = map_latent_raw(z, cam, s.gen);
  CHECK(raw.shape() == Shape{4, 8});
  CHECK(bit_equal(map_latent(z, cam, 0.0, s.w_bar, s.gen), s.w_bar));
  CHECK(bit_equal(map_latent(z, cam, 1.0, s.w_bar, s.gen), raw));
  CHECK(bit_equal(map_latent(z, cam, 0.7, s.w_bar, s.gen), map_latent(z, cam, 0.7, s.w_bar, s.gen)));
  const auto half = map_latent(z, cam, 0.5, s.w_bar, s.gen);
  for (int64_t i = 0; i < half.numel(); ++i) CHECK(std::abs(half[i] - 0.5 * (raw[i] + s.w_bar[i])) <= 1e-6);
  CHECK_THROWS_AS(map_latent(z, cam, 1.5, s.w_bar, s.gen), UsageError);
}

TEST_CASE("mapping consumes the camera pose") {
  const auto s = tiny_state();
  const auto z = random_z(4, 4);
  Camera a, b;
  b.yaw = 0.6;
  CHECK_FALSE(bit_equal(map_latent_raw(z, a, s.gen), map_latent_raw(z, b, s.gen)));
}

TEST_CASE("synthesis shapes and determinism") {
  Rng rng(1);
  GeneratorConfig desk;
  auto params = GeneratorParams::init(desk, rng);
  auto w = rand_tensor({6, 32}, 2);
  const auto tri = synthesize_triplanes(w, params);
  CHECK(tri.planes().shape() == Shape{3, 8, 32, 32});
  CHECK(bit_equal(tri.planes(), synthesize_triplanes(w, params).planes()));
  CHECK_THROWS_AS(synthesize_triplanes(rand_tensor({5, 32}, 3), params), DimensionError);
}

TEST_CASE("zero output convolution leaves the broadcast bias") {
  auto s = tiny_state();
  auto& out = s.gen.layers.back();
  for (auto& v : out.conv_w.mutable_data()) v = 0;
  auto b = out.conv_b.mutable_data();
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = 0.1f * static_cast<float>(i) - 0.2f;
  const auto tri = synthesize_triplanes(rand_tensor({4, 8}, 5), s.gen);
  const int64_t P = 8, C = 2;
  for (int64_t p = 0; p < 3; ++p)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t k = 0; k < P * P; ++k) CHECK(tri.planes()[(p * C + c) * P * P + k] == b[p * C + c]);
}

TEST_CASE("gradient with respect to one latent row") {
  // Unit prelu slopes make synthesis smooth in w, so central differences
  // are not spoiled by kink crossings.
  auto s = tiny_state(2);
  for (auto& l : s.gen.layers) {
    if (l.kind != StyleLayer::Kind::Output)
      for (auto& a : l.alpha.mutable_data()) a = 1.0f;
  }
  auto w = rand_tensor({4, 8}, 6, -1, 1, true);
  auto probe = rand_tensor({3, 2, 8, 8}, 7);
  auto loss_of = [&](const Tensor& wt) { return sum(mul(synthesize_triplanes(wt, s.gen).planes(), probe)); };
  const auto g = backward(loss_of(w)).at(w.id());
  for (int row = 0; row < 4; ++row) {
    double num = 0, den = 0;
    for (int d = 0; d < 8; ++d) {
      const int i = row * 8 + d;
      std::vector<float> p(w.data().begin(), w.data().end()), m = p;
      const float h = 1e-2f;
      p[i] += h;
      m[i] -= h;
      NoGradGuard ng;
      const double fd = (loss_of(Tensor::from({4, 8}, p)).item() - loss_of(Tensor::from({4, 8}, m)).item()) / (2 * h);
      num += (fd - g[i]) * (fd - g[i]);
      den += fd * fd;
    }
    INFO("row ", row);
    CHECK(std::sqrt(num / den) <= 1e-2);
  }
}

TEST_CASE("estimate_w_bar") {
  const auto s = tiny_state();
  CHECK(estimate_w_bar(s.gen, 10, 3).shape() == Shape{4, 8});
  // n = 1 is the first sample of the seeded stream
  {
    Rng rng(9);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<float> z(4);
    for (auto& v : z) v = static_cast<float>(nd(rng));
    const Camera cam = sample_pose(rng, PoseRange{});
    CHECK(bit_equal(estimate_w_bar(s.gen, 1, 9), map_latent_raw(Tensor::from({1, 4}, z), cam, s.gen)));
  }
  // Monte-Carlo error shrinks like 1/sqrt(n)
  auto spread = [&](int n) {
    double total = 0;
    std::vector<Tensor> reps;
    for (uint64_t r = 0; r < 10; ++r) reps.push_back(estimate_w_bar(s.gen, n, 100 + r));
    for (int64_t i = 0; i < 8; ++i) {  // first row suffices (rows are broadcast)
      double m = 0, v = 0;
      for (const auto& t : reps) m += t[i] / 10.0;
      for (const auto& t : reps) v += (t[i] - m) * (t[i] - m) / 9.0;
      total += std::sqrt(v);
    }
    return total / 8;
  };
  const double s1k = spread(1024), s4k = spread(4096), s16k = spread(16384);
  INFO("std 1024: ", s1k, " 4096: ", s4k, " 16384: ", s16k);
  // expected ratios 0.5 and 0.25
  CHECK(s4k / s1k > 0.3);
  CHECK(s4k / s1k < 0.75);
  CHECK(s16k < 0.5 * s1k);
}

TEST_CASE("fit_autodecoder smoke runs") {
  OracleConfig oc;
  oc.resolution = 16;
  oc.n_samples = 16;
  const auto data = build_dataset(8, 2, false, 5, oc);
  const auto proxies = LossProxies::create();
  GeneratorFitConfig cfg;
  cfg.generator = tiny_generator();
  cfg.render = tiny_render_config();
  cfg.batch = 2;
  cfg.w_bar_samples = 64;

  SUBCASE("100 steps reduce the loss") {
    cfg.steps = 100;
    cfg.lr = 1e-2;
    const auto r = fit_autodecoder(data, cfg, proxies);
    REQUIRE(r.losses.size() == 100u);
    double first = 0, last = 0;
    for (int i = 0; i < 10; ++i) first += r.losses[i], last += r.losses[90 + i];
    CHECK(last < first);
  }
  SUBCASE("zero learning rates leave parameters untouched") {
    cfg.steps = 5;
    cfg.lr = 0;
    cfg.latent_lr = 0;
    auto fitted = fit_autodecoder(data, cfg, proxies).state;
    auto fresh = GeneratorState::init(cfg.generator, cfg.render, data.latent_count(), cfg.seed);
    const auto a = fitted.params(), b = fresh.params();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(bit_equal(*a[i].tensor, *b[i].tensor));
    CHECK(bit_equal(fitted.latents, fresh.latents));
  }
  SUBCASE("empty dataset") {
    Dataset empty;
    CHECK_THROWS_AS(fit_autodecoder(empty, cfg, proxies), UsageError);
  }
}

}  // TEST_SUITE

#include "helpers.hpp"
#include "tpn/ops.hpp"

using namespace tpn;
using namespace tpn::test;

namespace {

struct Rig {
  GeneratorState state = tiny_state(3);
  LatentEncoder phi;
  OffsetNet psi;
  Tensor x = rand_tensor({3, 16, 16}, 40, 0, 1);
  Camera cam;

  Rig() {
    Rng rng(5);
    phi = LatentEncoder::init(tiny_encoder(), 4, 8, rng);
    psi = OffsetNet::init(tiny_encoder(), tiny_generator().planes, rng);
    cam.yaw = 0.2;
  }
  // Gives psi's zero-initialized output conv random weights.
  void randomize_psi_output(uint64_t seed) {
    auto w = psi.out_w.mutable_data();
    auto r = rand_tensor(psi.out_w.shape(), seed, -0.5, 0.5);
    std::copy(r.data().begin(), r.data().end(), w.begin());
  }
};

}  // namespace

TEST_SUITE("encoders") {

TEST_CASE("encode_latent") {
  Rig rig;
  const auto w = encode_latent(rig.x, rig.phi, rig.state.w_bar);
  CHECK(w.shape() == Shape{4, 8});

  auto zero = rig.phi.clone();
  for (auto& p : zero.params()) std::fill(p.tensor->mutable_data().begin(), p.tensor->mutable_data().end(), 0.0f);
  CHECK(bit_equal(encode_latent(rig.x, zero, rig.state.w_bar), rig.state.w_bar));

  // additivity in w_bar
  const auto wb2 = rand_tensor({4, 8}, 41);
  const auto a = encode_latent(rig.x, rig.phi, rig.state.w_bar), b = encode_latent(rig.x, rig.phi, wb2);
  for (int64_t i = 0; i < a.numel(); ++i) {
    CHECK(double(a[i]) - double(b[i]) == doctest::Approx(double(rig.state.w_bar[i]) - double(wb2[i])).epsilon(1e-6));
  }
  // exact at the level of phi(x): both equal phi(x) + w_bar computed by the same op
  const auto phi_x = sub(a, rig.state.w_bar);
  CHECK(bit_equal(add(phi_x, rig.state.w_bar), a));

  CHECK_THROWS_AS(encode_latent(rand_tensor({3, 8, 8}, 1), rig.phi, rig.state.w_bar), DimensionError);
}

TEST_CASE("encode_latent input gradient on a 4x4 crop") {
  // With unit prelu slopes the encoder is affine in its input and central
  // differences are exact up to rounding.
  Rig rig;
  for (auto* convs : {&rig.phi.backbone, &rig.phi.head_convs})
    for (auto& c : *convs)
      for (auto& a : c.alpha.mutable_data()) a = 1.0f;
  auto probe = rand_tensor({4, 8}, 42);
  auto loss_of = [&](const Tensor& img) { return sum(mul(encode_latent(img, rig.phi, rig.state.w_bar), probe)); };
  auto x = rig.x.clone();
  x.set_requires_grad(true);
  const auto g = backward(loss_of(x)).at(x.id());
  double num = 0, den = 0;
  for (int c = 0; c < 3; ++c)
    for (int i = 6; i < 10; ++i)
      for (int j = 6; j < 10; ++j) {
        const int k = (c * 16 + i) * 16 + j;
        std::vector<float> p(x.data().begin(), x.data().end()), m = p;
        const float h = 1e-2f;
        p[k] += h;
        m[k] -= h;
        NoGradGuard ng;
        const double fd =
            (loss_of(Tensor::from(x.shape(), p)).item() - loss_of(Tensor::from(x.shape(), m)).item()) / (2 * h);
        num += (fd - g[k]) * (fd - g[k]);
        den += fd * fd;
      }
  CHECK(den > 0);
  CHECK(std::sqrt(num / den) <= 1e-2);
}

TEST_CASE("predict_offsets") {
  Rig rig;
  const auto y_hat = rand_tensor({3, 16, 16}, 43, 0, 1);
  const auto d0 = predict_offsets(y_hat, rig.x, rig.psi);
  CHECK(d0.planes().shape() == Shape{3, 2, 8, 8});
  for (float v : d0.planes().data()) CHECK(v == 0.0f);

  rig.randomize_psi_output(44);
  const auto a = predict_offsets(y_hat, rig.x, rig.psi), b = predict_offsets(rig.x, y_hat, rig.psi);
  CHECK(max_abs_diff(a.planes(), b.planes()) > 1e-4);
  CHECK_THROWS_AS(predict_offsets(y_hat, rand_tensor({3, 8, 8}, 1), rig.psi), DimensionError);
}

TEST_CASE("zero-initialized second branch reproduces the first branch") {
  Rig rig;
  const auto r = invert_forward(rig.x, rig.cam, rig.phi, rig.psi, rig.state);
  CHECK(bit_equal(r.y_final, r.y_initial));
  const auto direct = rig.state.render_latent(encode_latent(rig.x, rig.phi, rig.state.w_bar), rig.cam).image;
  CHECK(bit_equal(r.y_initial, direct));
  const auto again = invert_forward(rig.x, rig.cam, rig.phi, rig.psi, rig.state);
  CHECK(bit_equal(again.y_final, r.y_final));
}

TEST_CASE("cttr_refine") {
  Rig rig;
  rig.randomize_psi_output(45);
  auto base = invert_forward(rig.x, rig.cam, rig.phi, rig.psi, rig.state);

  SUBCASE("zero rounds") {
    auto r = base;
    cttr_refine(rig.x, rig.cam, r, rig.psi, rig.state, 0);
    CHECK(bit_equal(r.y_final, base.y_final));
    CHECK(r.refinements.empty());
    CHECK_THROWS_AS(cttr_refine(rig.x, rig.cam, r, rig.psi, rig.state, -1), UsageError);
  }
  SUBCASE("offsets are added to the initial tri-planes") {
    auto r1 = base, r2 = base;
    r2.delta = TriPlane(rand_tensor(base.delta.planes().shape(), 46, -50, 50), 1.0);  // sentinel
    cttr_refine(rig.x, rig.cam, r1, rig.psi, rig.state, 2);
    cttr_refine(rig.x, rig.cam, r2, rig.psi, rig.state, 2);
    REQUIRE(r1.refinements.size() == 2u);
    for (int k = 0; k < 2; ++k) CHECK(bit_equal(r1.refinements[k], r2.refinements[k]));
    // first round by hand: R(T + psi(y, x - y))
    const auto d = predict_offsets(base.y_final, rig.x, rig.psi);
    const auto y1 = render(apply_offsets(base.base, d), rig.state.render, rig.cam, rig.state.render_cfg).image;
    CHECK(bit_equal(r1.refinements[0], y1));
  }
  SUBCASE("fixed point") {
    // A psi whose output ignores its input always returns the current delta.
    auto psi = rig.psi.clone();
    for (auto& v : psi.out_w.mutable_data()) v = 0;
    auto b = psi.out_b.mutable_data();
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = 0.05f * static_cast<float>(i % 5) - 0.1f;
    auto r = invert_forward(rig.x, rig.cam, rig.phi, psi, rig.state);
    const auto y = r.y_final;
    cttr_refine(rig.x, rig.cam, r, psi, rig.state, 3);
    for (const auto& yr : r.refinements) CHECK(bit_equal(yr, y));
  }
}

}  // TEST_SUITE

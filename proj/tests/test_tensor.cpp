#include <bit>

#include "helpers.hpp"
#include "tpn/ops.hpp"
#include "tpn/triplane.hpp"

using namespace tpn;
using namespace tpn::test;

TEST_SUITE("tensor") {

TEST_CASE("matmul hand cases") {
  auto a = Tensor::from({2, 2}, {0.3f, -1.2f, 2.5f, 0.7f});
  auto eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  CHECK(bit_equal(matmul(eye, a), a));

  auto m = matmul(Tensor::from({2, 2}, {1, 2, 3, 4}), Tensor::from({2, 1}, {5, 6}));
  CHECK(m.shape() == Shape{2, 1});
  CHECK(m[0] == 17.0f);
  CHECK(m[1] == 39.0f);
  CHECK_THROWS_AS(matmul(a, Tensor::zeros({3, 1})), DimensionError);
}

TEST_CASE("conv2d conventions") {
  auto x = rand_tensor({1, 1, 4, 5}, 1);
  auto id = conv2d(x, Tensor::full({1, 1, 1, 1}, 1.0f), Tensor(), 1, Padding::Valid);
  CHECK(bit_equal(id, x));

  // valid conv of a constant image with a kernel summing to s is the constant c*s
  auto c = Tensor::full({1, 2, 5, 5}, 0.5f);
  auto k = Tensor::from({1, 2, 3, 3}, {1, 2, 3, 0, 0, 0, -1, 0.5f, 1, 0, 0, 0, 0, 2, 0, 0, 0, -0.5f});
  double s = 0;
  for (float v : k.data()) s += v;
  auto y = conv2d(c, k, Tensor(), 1, Padding::Valid);
  CHECK(y.shape() == Shape{1, 1, 3, 3});
  for (float v : y.data()) CHECK(v == doctest::Approx(0.5 * s).epsilon(1e-6));

  // cross-correlation: kernel is not flipped
  auto img = Tensor::from({1, 1, 1, 3}, {1, 2, 3});
  auto r = conv2d(img, Tensor::from({1, 1, 1, 3}, {1, 0, 0}), Tensor(), 1, Padding::Valid);
  CHECK(r[0] == 1.0f);

  auto s2 = conv2d(rand_tensor({1, 2, 6, 6}, 2), rand_tensor({3, 2, 3, 3}, 3), Tensor(), 2, Padding::Zero);
  CHECK(s2.shape() == Shape{1, 3, 3, 3});
  CHECK_THROWS_AS(conv2d(x, rand_tensor({1, 2, 3, 3}, 4), Tensor(), 1, Padding::Zero), DimensionError);
  CHECK_THROWS_AS(conv2d(x, rand_tensor({1, 1, 3, 3}, 4), Tensor(), 0, Padding::Zero), DimensionError);
}

TEST_CASE("pixel_shuffle layout and inverse") {
  auto x = Tensor::from({1, 4, 1, 1}, {1, 2, 3, 4});
  auto y = pixel_shuffle(x, 2);
  CHECK(y.shape() == Shape{1, 1, 2, 2});
  CHECK(std::vector<float>(y.data().begin(), y.data().end()) == std::vector<float>{1, 2, 3, 4});
  CHECK(pixel_shuffle(Tensor::zeros({1, 4, 2, 2}), 2).shape() == Shape{1, 1, 4, 4});

  for (uint64_t seed = 0; seed < 5; ++seed) {
    auto r = rand_tensor({2, 12, 3, 4}, seed);
    CHECK(bit_equal(space_to_depth(pixel_shuffle(r, 2), 2), r));
    auto q = rand_tensor({1, 3, 4, 6}, seed + 10);
    CHECK(bit_equal(pixel_shuffle(space_to_depth(q, 2), 2), q));
  }
  CHECK_THROWS_AS(pixel_shuffle(Tensor::zeros({1, 6, 2, 2}), 2), DimensionError);
}

TEST_CASE("grid_sample_2d texel centers and linear field") {
  // 3 x 4 plane with one channel
  const int H = 3, W = 4;
  std::vector<float> v(H * W);
  for (int i = 0; i < H * W; ++i) v[i] = static_cast<float>(i * i) * 0.1f;
  auto plane = Tensor::from({1, H, W}, v);
  auto at = [&](double x, double y) {
    return grid_sample_2d(plane, Tensor::from({1, 2}, {float(x), float(y)}))[0];
  };
  for (int h = 0; h < H; ++h) {
    for (int w = 0; w < W; ++w) {
      const double x = -1.0 + 2.0 * w / (W - 1), y = -1.0 + 2.0 * h / (H - 1);
      CHECK(at(x, y) == doctest::Approx(v[h * W + w]).epsilon(1e-6));
    }
  }
  // midpoint of two horizontal neighbours
  const double xm = -1.0 + 2.0 * 1.5 / (W - 1);
  CHECK(at(xm, -1.0) == doctest::Approx(0.5 * (v[1] + v[2])).epsilon(1e-6));
  // border clamp
  CHECK(at(-3.0, -2.0) == doctest::Approx(v[0]));

  // f(u, v) = u + 2v at texel centers is reproduced by bilinear interpolation
  const int P = 9;
  std::vector<float> f(P * P);
  for (int h = 0; h < P; ++h)
    for (int w = 0; w < P; ++w) f[h * P + w] = float((-1.0 + 2.0 * w / (P - 1)) + 2 * (-1.0 + 2.0 * h / (P - 1)));
  auto lin = Tensor::from({1, P, P}, f);
  auto coords = rand_tensor({100, 2}, 7, -0.999, 0.999);
  auto s = grid_sample_2d(lin, coords);
  for (int i = 0; i < 100; ++i) CHECK(s[i] == doctest::Approx(coords[2 * i] + 2 * coords[2 * i + 1]).epsilon(1e-5));
}

TEST_CASE("grid_sample_2d is linear in plane values") {
  auto p1 = rand_tensor({3, 6, 7}, 1), p2 = rand_tensor({3, 6, 7}, 2);
  auto coords = rand_tensor({40, 2}, 3);
  const float a = 0.7f, b = -1.3f;
  auto lhs = grid_sample_2d(add(scale(p1, a), scale(p2, b)), coords);
  auto rhs = add(scale(grid_sample_2d(p1, coords), a), scale(grid_sample_2d(p2, coords), b));
  CHECK(max_abs_diff(lhs, rhs) < 1e-5);
}

TEST_CASE("activations") {
  auto x = Tensor::from({1, 1, 1, 1}, {-2.0f});
  CHECK(prelu(x, Tensor::full({1}, 0.25f))[0] == -0.5f);
  CHECK(softplus(Tensor::scalar(0.0f))[0] == doctest::Approx(std::log(2.0)).epsilon(1e-7));
  CHECK(sigmoid(Tensor::scalar(0.0f))[0] == 0.5f);
  CHECK(tanh(Tensor::scalar(0.0f))[0] == 0.0f);
  // large inputs stay finite
  CHECK(softplus(Tensor::scalar(200.0f)).all_finite());
  CHECK(sigmoid(Tensor::scalar(-200.0f)).all_finite());
}

TEST_CASE("backward basics") {
  auto x = Tensor::scalar(3.0f, true);
  auto g = backward(square(x));
  CHECK(g.at(x.id())[0] == 6.0f);

  auto leaf = rand_tensor({2, 2}, 5, -1, 1, true);
  auto c = Tensor::scalar(4.0f);
  auto out = add(sum(mul(leaf, Tensor::zeros({2, 2}))), c);
  auto gc = backward(out);
  for (float v : gc.at(leaf.id()).data()) CHECK(v == 0.0f);

  CHECK_THROWS_AS(backward(leaf), UsageError);
}

TEST_CASE("no-grad guard stops recording") {
  auto x = Tensor::scalar(1.0f, true);
  {
    NoGradGuard ng;
    CHECK_FALSE(square(x).requires_grad());
  }
  CHECK(square(x).requires_grad());
}

TEST_CASE("conv -> prelu -> mean matches finite differences") {
  auto f = [](const auto& in) { return mean(prelu(conv2d(in[0], in[1], in[2], 1, Padding::Zero), in[3])); };
  std::mt19937_64 rng(11);
  for (int i = 0; i < 5; ++i) {
    std::vector<TensorD> in{random_tensor({1, 2, 5, 5}, rng), random_tensor({3, 2, 3, 3}, rng),
                            random_tensor({3}, rng), random_tensor({3}, rng, 0.1, 0.4)};
    CHECK(gradcheck_error<float>(f, in, {true, true, true, true}, 100 + i) <= 1e-3);
    CHECK(gradcheck_error<double>(f, in, {true, true, true, true}, 100 + i) <= 1e-5);
  }
}

TEST_CASE("repeated forward+backward gives bit-identical gradients") {
  // `pad` shifts heap addresses so alignment-dependent summation would show up
  auto run = [](std::size_t pad) {
    std::vector<std::vector<float>> shift;
    for (int i = 0; i < 8; ++i) shift.emplace_back(pad + i);
    auto x = rand_tensor({1, 3, 15, 15}, 21, -1, 1, true);
    auto w = rand_tensor({4, 3, 3, 3}, 22, -1, 1, true);
    auto bias = rand_tensor({4}, 25, -1, 1, true);
    auto p = Tensor::full({4}, 0.25f, true);
    auto y = prelu(conv2d(x, w, bias, 1, Padding::Zero), p);
    auto planes = rand_tensor({3, 4, 6, 6}, 23, -1, 1, true);
    auto s = sample_planes(planes, rand_tensor({500, 3}, 24), 1.0f);
    auto g = backward(add(mean(square(y)), mean(square(s))));
    return std::vector<Tensor>{g.at(x.id()), g.at(w.id()), g.at(bias.id()), g.at(p.id()), g.at(planes.id())};
  };
  const auto a = run(1);
  for (std::size_t pad : {2, 3, 5, 9}) {
    const auto b = run(pad);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(bit_equal(a[i], b[i]));
  }
}

TEST_CASE("gradcheck suite (every op, 20 instances, both precisions)") {
  const auto results = run_gradcheck_suite(20, 1234);
  CHECK(results.size() >= 70);
  for (const auto& r : results) {
    INFO(r.name, " max rel error ", r.max_rel_error);
    CHECK(r.instances == 20);
    CHECK(r.passed());
  }
}

}  // TEST_SUITE

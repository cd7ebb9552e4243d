#include "tpn/gradcheck.hpp"

#include <functional>

#include "tpn/renderer.hpp"
#include "tpn/triplane.hpp"

namespace tpn {

namespace {

using Inputs = std::function<std::vector<TensorD>(std::mt19937_64&)>;

template <class F>
void check(std::vector<GradCheckResult>& out, const std::string& name, F f, const Inputs& make,
           std::vector<bool> diff, int instances, uint64_t seed) {
  GradCheckResult rf{name + " [f32]", 0, instances, 1e-3};
  GradCheckResult rd{name + " [f64]", 0, instances, 1e-5};
  std::mt19937_64 rng(seed);
  for (int i = 0; i < instances; ++i) {
    const auto inputs = make(rng);
    if (diff.empty()) diff.assign(inputs.size(), true);
    rf.max_rel_error = std::max(rf.max_rel_error, gradcheck_error<float>(f, inputs, diff, seed + 17 * i));
    rd.max_rel_error = std::max(rd.max_rel_error, gradcheck_error<double>(f, inputs, diff, seed + 17 * i));
  }
  out.push_back(rf);
  out.push_back(rd);
}

Inputs shapes(std::vector<Shape> s, double lo = -1.0, double hi = 1.0) {
  return [s, lo, hi](std::mt19937_64& rng) {
    std::vector<TensorD> v;
    for (const auto& sh : s) v.push_back(random_tensor(sh, rng, lo, hi));
    return v;
  };
}

#define TPN_T using T = typename std::decay_t<decltype(in[0])>::value_type

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suite(int instances, uint64_t seed) {
  std::vector<GradCheckResult> out;
  const auto n = instances;
  uint64_t s = seed;
  auto next = [&s] { return s += 1000; };

  check(out, "add", [](const auto& in) { return add(in[0], in[1]); }, shapes({{2, 3}, {2, 3}}), {}, n, next());
  check(out, "sub", [](const auto& in) { return sub(in[0], in[1]); }, shapes({{2, 3}, {2, 3}}), {}, n, next());
  check(out, "mul", [](const auto& in) { return mul(in[0], in[1]); }, shapes({{2, 3}, {2, 3}}), {}, n, next());
  check(out, "scale", [](const auto& in) { TPN_T; return scale(in[0], T(0.7)); }, shapes({{2, 3}}), {}, n, next());
  check(out, "add_scalar", [](const auto& in) { TPN_T; return add_scalar(in[0], T(-0.3)); }, shapes({{2, 3}}), {}, n,
        next());
  check(out, "scale_by", [](const auto& in) { return scale_by(in[0], in[1]); }, shapes({{2, 3}, {1}}), {}, n, next());
  check(out, "square", [](const auto& in) { return square(in[0]); }, shapes({{2, 3}}), {}, n, next());
  check(out, "exp", [](const auto& in) { return exp(in[0]); }, shapes({{2, 3}}), {}, n, next());
  check(out, "sigmoid", [](const auto& in) { return sigmoid(in[0]); }, shapes({{2, 3}}, -3, 3), {}, n, next());
  check(out, "tanh", [](const auto& in) { return tanh(in[0]); }, shapes({{2, 3}}, -2, 2), {}, n, next());
  check(out, "softplus", [](const auto& in) { return softplus(in[0]); }, shapes({{2, 3}}, -3, 3), {}, n, next());
  check(out, "prelu", [](const auto& in) { return prelu(in[0], in[1]); }, shapes({{2, 3, 4}, {3}}), {}, n, next());
  check(out, "sum", [](const auto& in) { return sum(in[0]); }, shapes({{3, 4}}), {}, n, next());
  check(out, "mean", [](const auto& in) { return mean(in[0]); }, shapes({{3, 4}}), {}, n, next());
  check(out, "mse", [](const auto& in) { return mse(in[0], in[1]); }, shapes({{3, 4}, {3, 4}}), {}, n, next());
  check(out, "smooth_l1", [](const auto& in) { TPN_T; return smooth_l1(in[0], in[1], T(1)); },
        shapes({{3, 4}, {3, 4}}, -2, 2), {}, n, next());
  check(out, "matmul", [](const auto& in) { return matmul(in[0], in[1]); }, shapes({{2, 3}, {3, 4}}), {}, n, next());
  check(out, "linear", [](const auto& in) { return linear(in[0], in[1], in[2]); }, shapes({{2, 3}, {3, 4}, {4}}), {},
        n, next());
  check(out, "transpose", [](const auto& in) { return transpose(in[0]); }, shapes({{3, 4}}), {}, n, next());
  check(out, "reshape", [](const auto& in) { return reshape(in[0], {4, 3}); }, shapes({{3, 4}}), {}, n, next());
  check(out, "slice[axis0]", [](const auto& in) { return slice(in[0], 0, 1, 3); }, shapes({{4, 3}}), {}, n, next());
  check(out, "slice[axis1]", [](const auto& in) { return slice(in[0], 1, 1, 2); }, shapes({{2, 3, 2}}), {}, n,
        next());
  check(out, "concat[axis0]",
        [](const auto& in) { return concat(std::vector{in[0], in[1]}, 0); }, shapes({{2, 3}, {1, 3}}), {}, n, next());
  check(out, "concat[axis1]",
        [](const auto& in) { return concat(std::vector{in[0], in[1]}, 1); }, shapes({{1, 2, 2, 2}, {1, 3, 2, 2}}), {},
        n, next());
  check(out, "repeat_rows", [](const auto& in) { return repeat_rows(in[0], 3); }, shapes({{1, 4}}), {}, n, next());
  check(out, "conv2d[zero,s1]", [](const auto& in) { return conv2d(in[0], in[1], in[2], 1, Padding::Zero); },
        shapes({{1, 2, 5, 5}, {3, 2, 3, 3}, {3}}), {}, n, next());
  check(out, "conv2d[zero,s2]", [](const auto& in) { return conv2d(in[0], in[1], in[2], 2, Padding::Zero); },
        shapes({{2, 2, 6, 6}, {3, 2, 3, 3}, {3}}), {}, n, next());
  check(out, "conv2d[valid,1x1]", [](const auto& in) { return conv2d(in[0], in[1], in[2], 1, Padding::Valid); },
        shapes({{1, 3, 4, 4}, {2, 3, 1, 1}, {2}}), {}, n, next());
  check(out, "mul_channel", [](const auto& in) { return mul_channel(in[0], in[1]); }, shapes({{2, 3, 2, 2}, {2, 3}}),
        {}, n, next());
  check(out, "pixel_shuffle", [](const auto& in) { return pixel_shuffle(in[0], 2); }, shapes({{1, 8, 2, 3}}), {}, n,
        next());
  check(out, "space_to_depth", [](const auto& in) { return space_to_depth(in[0], 2); }, shapes({{1, 2, 4, 6}}), {}, n,
        next());
  check(out, "avg_pool2d", [](const auto& in) { return avg_pool2d(in[0], 2); }, shapes({{1, 2, 4, 4}}), {}, n, next());
  check(out, "global_avg_pool", [](const auto& in) { return global_avg_pool(in[0]); }, shapes({{2, 3, 3, 3}}), {}, n,
        next());
  check(out, "l2_normalize_rows", [](const auto& in) { return l2_normalize_rows(in[0]); }, shapes({{3, 4}}), {}, n,
        next());
  check(out, "grid_sample_2d", [](const auto& in) { return grid_sample_2d(in[0], in[1]); },
        [](std::mt19937_64& rng) {
          return std::vector{random_tensor({2, 5, 6}, rng), random_tensor({7, 2}, rng, -0.95, 0.95)};
        },
        {}, n, next());
  check(out, "sample_planes", [](const auto& in) { TPN_T; return sample_planes(in[0], in[1], T(1)); },
        [](std::mt19937_64& rng) {
          return std::vector{random_tensor({3, 2, 5, 5}, rng), random_tensor({6, 3}, rng, -0.95, 0.95)};
        },
        {true, false}, n, next());
  check(out, "decoder_mlp",
        [](const auto& in) { return decoder_mlp(in[0], in[1], in[2], in[3], in[4], in[5], in[6], in[7], in[8]); },
        shapes({{5, 4}, {4, 6}, {6}, {6}, {6, 6}, {6}, {6}, {6, 5}, {5}}), {}, n, next());
  check(out, "composite_rays", [](const auto& in) { return composite_rays(in[0], in[1], in[2]); },
        [](std::mt19937_64& rng) {
          return std::vector{random_tensor({3, 6}, rng, 0.0, 4.0), random_tensor({3, 6, 4}, rng, 0.0, 1.0),
                             random_tensor({3, 6}, rng, 0.05, 0.3)};
        },
        {true, true, false}, n, next());
  return out;
}

#undef TPN_T

}  // namespace tpn

#pragma once

// Central finite-difference gradient checks.
//
// The op under test is a generic callable taking std::vector<BasicTensor<T>>
// and returning one tensor; it is evaluated in the precision under test for
// analytic gradients and always in double for the finite differences. The
// scalar probed is sum(out * r) for a fixed random r, so every output element
// contributes.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "tpn/ops.hpp"
#include "tpn/tensor.hpp"

namespace tpn {

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0;  // worst instance
  int instances = 0;
  double tolerance = 0;
  bool passed() const { return max_rel_error <= tolerance; }
};

namespace detail {

inline double norm2(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

template <class T>
std::vector<BasicTensor<T>> convert_inputs(const std::vector<TensorD>& in, bool requires_grad) {
  std::vector<BasicTensor<T>> out;
  out.reserve(in.size());
  for (const auto& t : in) {
    out.push_back(BasicTensor<T>::from(t.shape(), std::vector<T>(t.data().begin(), t.data().end()),
                                       requires_grad));
  }
  return out;
}

}  // namespace detail

// Normwise relative error between analytic gradients (precision T) and double
// central differences with step h, over all inputs flagged in `differentiable`.
template <class T, class F>
double gradcheck_error(F&& f, const std::vector<TensorD>& inputs, const std::vector<bool>& differentiable,
                       uint64_t seed, double h = 1e-6) {
  // Fixed output projection.
  TensorD probe_out;
  {
    NoGradGuard ng;
    probe_out = f(detail::convert_inputs<double>(inputs, false));
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> proj(static_cast<std::size_t>(probe_out.numel()));
  for (auto& v : proj) v = nd(rng);

  auto analytic_in = detail::convert_inputs<T>(inputs, false);
  for (std::size_t i = 0; i < analytic_in.size(); ++i) {
    if (!differentiable[i]) continue;
    const auto d = analytic_in[i].data();
    analytic_in[i] = BasicTensor<T>::from(analytic_in[i].shape(), std::vector<T>(d.begin(), d.end()), true);
  }
  auto out = f(analytic_in);
  auto r = BasicTensor<T>::from(out.shape(), std::vector<T>(proj.begin(), proj.end()));
  auto loss = sum(mul(out, r));
  backward(loss);

  auto eval = [&](const std::vector<TensorD>& in) {
    NoGradGuard ng;
    auto o = f(in);
    double s = 0;
    for (std::size_t k = 0; k < proj.size(); ++k) s += o.data()[k] * proj[k];
    return s;
  };

  std::vector<double> ga, gf;
  std::vector<TensorD> work = detail::convert_inputs<double>(inputs, false);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!differentiable[i]) continue;
    const auto g = analytic_in[i].grad();
    for (int64_t k = 0; k < inputs[i].numel(); ++k) {
      ga.push_back(g.empty() ? 0.0 : static_cast<double>(g[static_cast<std::size_t>(k)]));
      auto data = work[i].mutable_data();
      const double orig = data[static_cast<std::size_t>(k)];
      data[static_cast<std::size_t>(k)] = orig + h;
      const double fp = eval(work);
      data[static_cast<std::size_t>(k)] = orig - h;
      const double fm = eval(work);
      data[static_cast<std::size_t>(k)] = orig;
      gf.push_back((fp - fm) / (2 * h));
    }
  }
  std::vector<double> diff(ga.size());
  for (std::size_t k = 0; k < ga.size(); ++k) diff[k] = ga[k] - gf[k];
  const double denom = std::max({detail::norm2(gf), detail::norm2(ga), 1e-12});
  return detail::norm2(diff) / denom;
}

// Random tensor with entries uniform in [lo, hi].
inline TensorD random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = u(rng);
  return TensorD::from(std::move(shape), std::move(v));
}

// Runs the built-in op suite (every differentiable op, `instances` random
// cases each) in both precisions. Tolerances: 1e-3 (float), 1e-5 (double).
std::vector<GradCheckResult> run_gradcheck_suite(int instances, uint64_t seed);

}  // namespace tpn

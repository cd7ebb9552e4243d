#pragma once

// First-order optimizers: Adam over named parameter tensors and L-BFGS with a
// strong-Wolfe line search over one flat vector.

#include <cstdint>
#include <functional>
#include <vector>

#include "tpn/nn.hpp"
#include "tpn/tensor.hpp"

namespace tpn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(ParamList params, AdamConfig cfg);

  // Parameters missing from `grads` (not reached by the loss) see a zero
  // gradient.
  void step(const GradientMap<float>& grads);
  void set_lr(double lr) { cfg_.lr = lr; }
  int64_t steps() const { return t_; }
  const ParamList& params() const { return params_; }

 private:
  ParamList params_;
  AdamConfig cfg_;
  int64_t t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

struct LbfgsConfig {
  int max_iter = 50;
  int history = 10;
  int max_line_search = 20;
  double c1 = 1e-4;
  double c2 = 0.9;
  double tol_grad = 1e-9;
  double tol_change = 1e-12;
};

struct LbfgsResult {
  std::vector<double> x;
  double f_initial = 0;
  double f_final = 0;
  int iterations = 0;
  int evaluations = 0;
  bool line_search_failed = false;
  std::vector<double> trace;  // objective after each accepted step, starting with f(x0)
};

// Objective value with its gradient written to `grad` (same size as x).
using Objective = std::function<double(const std::vector<double>& x, std::vector<double>& grad)>;

// Only steps that satisfy the sufficient-decrease condition are taken, so
// f_final <= f_initial. A failed line search ends the run early.
LbfgsResult lbfgs_minimize(const Objective& f, std::vector<double> x0, const LbfgsConfig& cfg = {});

}  // namespace tpn

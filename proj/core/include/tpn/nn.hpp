#pragma once

// Parameter bookkeeping shared by every trainable block.

#include <random>
#include <string>
#include <vector>

#include "tpn/tensor.hpp"

namespace tpn {

struct NamedTensor {
  std::string name;
  Tensor* tensor;
};
using ParamList = std::vector<NamedTensor>;

using Rng = std::mt19937_64;

// N(0, gain^2 / fan_in) entries; trainable leaf.
Tensor init_normal(Shape shape, double fan_in, Rng& rng, double gain = 1.4142135623730951);
Tensor init_constant(Shape shape, float value);

void set_trainable(const ParamList& params, bool trainable);
std::vector<Tensor> snapshot(const ParamList& params);
void restore(const ParamList& params, const std::vector<Tensor>& values);
// Deep-copies values from src into dst (names and shapes must match).
void copy_params(const ParamList& dst, const ParamList& src);
// Fresh leaf tensors with the same values and flags.
void deep_copy_into(const ParamList& dst, const ParamList& src);
int64_t count_values(const ParamList& params);
ParamList concat_params(std::initializer_list<ParamList> lists);

}  // namespace tpn

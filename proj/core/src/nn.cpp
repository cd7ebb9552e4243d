#include "tpn/nn.hpp"

#include <algorithm>
#include <cmath>

namespace tpn {

Tensor init_normal(Shape shape, double fan_in, Rng& rng, double gain) {
  std::normal_distribution<double> nd(0.0, gain / std::sqrt(fan_in));
  std::vector<float> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = static_cast<float>(nd(rng));
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor init_constant(Shape shape, float value) { return Tensor::full(std::move(shape), value, true); }

void set_trainable(const ParamList& params, bool trainable) {
  for (const auto& p : params) p.tensor->set_requires_grad(trainable);
}

std::vector<Tensor> snapshot(const ParamList& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.tensor->clone());
  return out;
}

void restore(const ParamList& params, const std::vector<Tensor>& values) {
  if (values.size() != params.size()) throw DimensionError("restore: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].tensor->mutable_data();
    const auto src = values[i].data();
    if (dst.size() != src.size()) throw DimensionError("restore: size mismatch for " + params[i].name);
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

void copy_params(const ParamList& dst, const ParamList& src) {
  if (dst.size() != src.size()) throw DimensionError("copy_params: parameter count mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i].tensor->shape() != src[i].tensor->shape()) {
      throw DimensionError("copy_params: shape mismatch for " + dst[i].name);
    }
    auto d = dst[i].tensor->mutable_data();
    const auto s = src[i].tensor->data();
    std::copy(s.begin(), s.end(), d.begin());
  }
}

void deep_copy_into(const ParamList& dst, const ParamList& src) {
  if (dst.size() != src.size()) throw DimensionError("deep_copy_into: parameter count mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) *dst[i].tensor = src[i].tensor->clone();
}

int64_t count_values(const ParamList& params) {
  int64_t n = 0;
  for (const auto& p : params) n += p.tensor->numel();
  return n;
}

ParamList concat_params(std::initializer_list<ParamList> lists) {
  ParamList out;
  for (const auto& l : lists) out.insert(out.end(), l.begin(), l.end());
  return out;
}

}  // namespace tpn

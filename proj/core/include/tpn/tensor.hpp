#pragma once

// Dense row-major tensors with a reverse-mode gradient record.
//
// A tensor is a shared handle to an immutable Node. Ops that consume at least
// one gradient-requiring input record their parents and a backward closure on
// the result node. Node ids grow monotonically with creation, so sorting the
// reachable graph by descending id replays execution in exact reverse order.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tpn/errors.hpp"

namespace tpn {

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), int64_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

namespace detail {
inline std::atomic<uint64_t>& node_counter() {
  static std::atomic<uint64_t> counter{1};
  return counter;
}
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <class T>
struct Node {
  uint64_t id = detail::node_counter().fetch_add(1, std::memory_order_relaxed);
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parent grads.
  std::function<void(Node&)> backward_fn;

  // Zero-initialized gradient buffer, allocated on first use.
  std::vector<T>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

template <class T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static BasicTensor from(Shape shape, std::vector<T> data, bool requires_grad = false) {
    if (tpn::numel(shape) != static_cast<int64_t>(data.size())) {
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + to_string(shape));
    }
    for (auto d : shape) {
      if (d <= 0) throw DimensionError("tensor dimensions must be positive: " + to_string(shape));
    }
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return BasicTensor(std::move(n));
  }
  static BasicTensor zeros(Shape shape, bool requires_grad = false) {
    auto count = static_cast<std::size_t>(tpn::numel(shape));
    return from(std::move(shape), std::vector<T>(count, T(0)), requires_grad);
  }
  static BasicTensor full(Shape shape, T v, bool requires_grad = false) {
    auto count = static_cast<std::size_t>(tpn::numel(shape));
    return from(std::move(shape), std::vector<T>(count, v), requires_grad);
  }
  static BasicTensor scalar(T v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int64_t dim(int i) const { return node_->shape.at(i < 0 ? i + rank() : i); }
  int64_t numel() const { return static_cast<int64_t>(node_->value.size()); }
  uint64_t id() const { return node_->id; }
  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->is_leaf; }

  std::span<const T> data() const { return node_->value; }
  // Only for leaves: parameter updates between steps.
  std::span<T> mutable_data() {
    if (!node_->is_leaf) throw UsageError("mutable_data() on a non-leaf tensor");
    return node_->value;
  }
  std::span<const T> grad() const { return node_->grad; }
  // Leaves only: marks a parameter as trainable or frozen.
  void set_requires_grad(bool flag) {
    if (!node_->is_leaf) throw UsageError("set_requires_grad() on a non-leaf tensor");
    node_->requires_grad = flag;
  }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  void zero_grad() { node_->grad.clear(); }

  T item() const {
    if (numel() != 1) throw UsageError("item() on tensor of shape " + to_string(shape()));
    return node_->value[0];
  }
  T operator[](int64_t i) const { return node_->value[static_cast<std::size_t>(i)]; }

  bool all_finite() const {
    return std::all_of(node_->value.begin(), node_->value.end(),
                       [](T v) { return std::isfinite(v); });
  }

  // New leaf holding a copy of the values, cut from any graph.
  BasicTensor detach() const { return from(shape(), node_->value, false); }
  // Deep copy that keeps the requires_grad flag (for parameter snapshots).
  BasicTensor clone() const { return from(shape(), node_->value, requires_grad()); }

  template <class U>
  BasicTensor<U> cast() const {
    return BasicTensor<U>::from(shape(), std::vector<U>(node_->value.begin(), node_->value.end()),
                                requires_grad());
  }

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

template <class T>
using GradientMap = std::map<uint64_t, BasicTensor<T>>;

// Record of the operations reachable from a scalar loss, in execution order.
template <class T>
class Tape {
 public:
  explicit Tape(const BasicTensor<T>& loss) : loss_(loss) {
    if (!loss.defined() || loss.numel() != 1) {
      throw UsageError("backward requires a scalar loss, got shape " +
                       (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
    }
    std::unordered_set<uint64_t> seen;
    std::vector<Node<T>*> stack{loss.node().get()};
    while (!stack.empty()) {
      Node<T>* n = stack.back();
      stack.pop_back();
      if (!seen.insert(n->id).second) continue;
      nodes_.push_back(n);
      for (auto& p : n->parents) {
        if (p->requires_grad) stack.push_back(p.get());
      }
    }
    std::sort(nodes_.begin(), nodes_.end(), [](auto* a, auto* b) { return a->id < b->id; });
  }

  std::size_t size() const { return nodes_.size(); }
  const std::vector<Node<T>*>& nodes() const { return nodes_; }

  // Visits nodes in reverse execution order. Interior gradient buffers are
  // released once consumed; leaf gradients remain on the leaves and are
  // returned keyed by node id.
  GradientMap<T> backward() {
    for (auto* n : nodes_) n->grad.clear();
    GradientMap<T> out;
    if (!loss_.requires_grad()) return out;
    loss_.node()->grad_buffer()[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node<T>* n = *it;
      if (n->is_leaf) continue;
      if (n->backward_fn && n->grad.size() == n->value.size()) n->backward_fn(*n);
      std::vector<T>().swap(n->grad);
    }
    for (auto* n : nodes_) {
      if (!n->is_leaf) continue;
      n->grad_buffer();
      out.emplace(n->id, BasicTensor<T>::from(n->shape, n->grad));
    }
    return out;
  }

 private:
  BasicTensor<T> loss_;
  std::vector<Node<T>*> nodes_;
};

template <class T>
GradientMap<T> backward(const BasicTensor<T>& loss) {
  return Tape<T>(loss).backward();
}

namespace detail {

// Creates an op result. When gradient recording is active and any input
// requires a gradient, the result records `inputs` as parents and `fn` as its
// backward closure.
template <class T>
BasicTensor<T> record(const char* op, Shape shape, std::vector<T> value,
                      std::initializer_list<const BasicTensor<T>*> inputs,
                      std::function<void(Node<T>&)> fn) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  n->is_leaf = false;
  bool any = false;
  for (auto* in : inputs) any = any || in->requires_grad();
  if (any && grad_enabled()) {
    n->requires_grad = true;
    for (auto* in : inputs) n->parents.push_back(in->node());
    n->backward_fn = std::move(fn);
  }
  return BasicTensor<T>(std::move(n));
}

template <class T>
BasicTensor<T> record(const char* op, Shape shape, std::vector<T> value,
                      const std::vector<BasicTensor<T>>& inputs, std::function<void(Node<T>&)> fn) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  n->is_leaf = false;
  bool any = std::any_of(inputs.begin(), inputs.end(), [](auto& t) { return t.requires_grad(); });
  if (any && grad_enabled()) {
    n->requires_grad = true;
    for (auto& in : inputs) n->parents.push_back(in.node());
    n->backward_fn = std::move(fn);
  }
  return BasicTensor<T>(std::move(n));
}

// Parent i's gradient buffer if it participates in backward, else nullptr.
template <class T>
T* parent_grad(Node<T>& self, std::size_t i) {
  auto& p = self.parents[i];
  return p->requires_grad ? p->grad_buffer().data() : nullptr;
}

}  // namespace detail

}  // namespace tpn

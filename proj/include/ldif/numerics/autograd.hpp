#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ldif/errors.hpp"
#include "ldif/numerics/tensor.hpp"

namespace ldif {

template <class T>
struct Node;

template <class T>
using Var = std::shared_ptr<Node<T>>;

// One value in the reverse-mode graph. Leaves either carry a trainable
// parameter (named) or a constant input; interior nodes remember their inputs
// and a closure that pushes `grad` back into them.
template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::string name;
  std::vector<Var<T>> inputs;
  std::function<void(Node&)> backward_fn;

  const Shape& shape() const { return value.shape(); }

  // Gradient buffer, zero-filled on first use.
  Tensor<T>& grad_buffer() {
    if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    return grad;
  }

  bool has_grad() const { return grad.shape() == value.shape(); }
};

namespace detail {
inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}
inline bool& finite_checks_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

// Disables graph recording for the current thread (sampling, evaluation).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline void set_finite_checks(bool on) { detail::finite_checks_flag() = on; }
inline bool finite_checks() { return detail::finite_checks_flag(); }

template <class T>
Var<T> constant(Tensor<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  return n;
}

template <class T>
Var<T> leaf(Tensor<T> value, std::string name = {}) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->requires_grad = true;
  n->name = std::move(name);
  return n;
}

// Creates the output node of an op. The backward closure is only kept when
// grad mode is on and some input needs a gradient.
template <class T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs, std::function<void(Node<T>&)> backward,
                   const char* op) {
  if (finite_checks() && !value.all_finite()) {
    throw NumericError(std::string("non-finite value produced by ") + op);
  }
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  bool needs = false;
  for (const auto& in : inputs) needs = needs || (in && in->requires_grad);
  if (needs && grad_enabled()) {
    n->requires_grad = true;
    n->inputs = std::move(inputs);
    n->backward_fn = std::move(backward);
  }
  return n;
}

// Reverse sweep from a scalar (or seeded) output. Gradients accumulate into
// every reachable node with requires_grad, including parameter leaves.
template <class T>
void backward(const Var<T>& root, const Tensor<T>* seed = nullptr) {
  if (!root->requires_grad) return;
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->inputs.size()) {
      Node<T>* child = node->inputs[idx++].get();
      if (child && child->requires_grad && seen.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  auto& g = root->grad_buffer();
  if (seed) {
    if (seed->shape() != root->shape()) throw ShapeError("backward seed shape mismatch");
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += (*seed)[i];
  } else {
    if (root->value.size() != 1) throw ShapeError("backward without seed needs a scalar root");
    g[0] += T{1};
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && n->has_grad()) n->backward_fn(*n);
  }
}

// Named trainable tensors. Names are unique; iteration order is creation
// order, which fixes the layout of checkpoints and optimizer state.
template <class T>
class ParamStore {
 public:
  Var<T> create(const std::string& name, Tensor<T> init) {
    if (index_.count(name)) throw Error("duplicate parameter name: " + name);
    auto v = leaf(std::move(init), name);
    index_[name] = params_.size();
    params_.push_back(v);
    return v;
  }

  const std::vector<Var<T>>& params() const { return params_; }
  std::size_t size() const { return params_.size(); }

  Var<T> find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second];
  }

  Var<T> get(const std::string& name) const {
    auto v = find(name);
    if (!v) throw Error("unknown parameter: " + name);
    return v;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) {
      if (p->has_grad()) p->grad.fill(T{0});
    }
  }

 private:
  std::vector<Var<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace ldif

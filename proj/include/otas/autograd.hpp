#pragma once

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "otas/errors.hpp"
#include "otas/tensor.hpp"

namespace otas {

/// A value in the computation graph plus its lazily allocated gradient.
template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::function<void()> backward_fn;

  Tensor<T>& grad_buffer() {
    if (grad.empty() && !value.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }
  void zero_grad() { grad = Tensor<T>(); }
};

template <class T>
using Var = std::shared_ptr<Node<T>>;

template <class T>
Var<T> leaf(Tensor<T> value, bool requires_grad = false) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

/// Records the forward pass of one clip so the loss can be differentiated.
///
/// Nodes are appended in creation order, which is already a topological
/// order, so backward simply walks the list in reverse. With recording off
/// the ops still compute values but keep no closures.
template <class T>
class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) {}

  bool recording() const { return record_; }

  /// Builds an op output. `backward` runs only if some input needs a gradient.
  template <class Fn>
  Var<T> make(Tensor<T> value, bool any_input_requires_grad, Fn&& backward_factory) {
    auto out = std::make_shared<Node<T>>();
    out->value = std::move(value);
    if (record_ && any_input_requires_grad) {
      out->requires_grad = true;
      out->backward_fn = backward_factory(out.get());
      nodes_.push_back(out);
    }
    return out;
  }

  std::size_t size() const { return nodes_.size(); }

  void backward(const Var<T>& loss) {
    if (!record_ || nodes_.empty()) throw std::logic_error("backward called before a recorded forward pass");
    if (loss->value.size() != 1) throw ShapeError("backward expects a scalar loss");
    if (!loss->value.all_finite()) throw NumericError("non-finite loss");
    loss->grad_buffer()[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node<T>& n = **it;
      if (n.grad.empty() || !n.backward_fn) continue;
      n.backward_fn();
    }
    nodes_.clear();
  }

 private:
  bool record_;
  std::vector<Var<T>> nodes_;
};

template <class... V>
bool any_requires_grad(const V&... vars) {
  return ((vars && vars->requires_grad) || ...);
}

/// Named trainable tensors, in registration order.
template <class T>
class ParamStore {
 public:
  Var<T> add(std::string name, Tensor<T> init) {
    for (const auto& [n, _] : params_)
      if (n == name) throw std::logic_error("duplicate parameter " + name);
    auto v = leaf(std::move(init), true);
    params_.emplace_back(std::move(name), v);
    return v;
  }

  const std::vector<std::pair<std::string, Var<T>>>& items() const { return params_; }

  Var<T> find(const std::string& name) const {
    for (const auto& [n, v] : params_)
      if (n == name) return v;
    return nullptr;
  }

  void zero_grad() {
    for (auto& [_, v] : params_) v->zero_grad();
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& [_, v] : params_) n += v->value.size();
    return n;
  }

  /// Copies values by name from a store of another precision.
  template <class U>
  void copy_from(const ParamStore<U>& other) {
    for (auto& [name, v] : params_) {
      auto src = other.find(name);
      if (!src) throw ShapeError("missing parameter " + name);
      if (src->value.shape() != v->value.shape()) throw ShapeError("shape mismatch for parameter " + name);
      v->value = src->value.template cast<T>();
    }
  }

 private:
  std::vector<std::pair<std::string, Var<T>>> params_;
};

}  // namespace otas

#pragma once

#include <cmath>
#include <vector>

#include "otas/autograd.hpp"

namespace otas {

/// Adam with the usual moment coefficients.
template <class T>
class Adam {
 public:
  struct Options {
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  Adam(ParamStore<T>& params, Options opt) : params_(params), opt_(opt) {
    for (const auto& [_, v] : params_.items()) {
      m_.emplace_back(v->value.shape());
      v_.emplace_back(v->value.shape());
    }
  }

  std::size_t steps() const { return step_; }
  const Options& options() const { return opt_; }
  const std::vector<Tensor<T>>& first_moments() const { return m_; }
  const std::vector<Tensor<T>>& second_moments() const { return v_; }

  void restore(std::size_t steps, std::vector<Tensor<T>> m, std::vector<Tensor<T>> v) {
    if (m.size() != m_.size() || v.size() != v_.size()) throw ShapeError("optimizer state has wrong parameter count");
    for (std::size_t p = 0; p < m_.size(); ++p)
      if (m[p].shape() != m_[p].shape() || v[p].shape() != v_[p].shape())
        throw ShapeError("optimizer state shape mismatch for " + params_.items()[p].first);
    step_ = steps;
    m_ = std::move(m);
    v_ = std::move(v);
  }

  /// Applies one update from the accumulated gradients, then clears them.
  void step() {
    ++step_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(step_));
    const auto& items = params_.items();
    for (std::size_t p = 0; p < items.size(); ++p) {
      auto& node = *items[p].second;
      if (node.grad.empty()) continue;
      if (!node.grad.all_finite()) throw NumericError("non-finite gradient for " + items[p].first);
      auto& m = m_[p];
      auto& v = v_[p];
      for (std::size_t i = 0; i < node.value.size(); ++i) {
        const double g = static_cast<double>(node.grad[i]);
        m[i] = static_cast<T>(opt_.beta1 * m[i] + (1.0 - opt_.beta1) * g);
        v[i] = static_cast<T>(opt_.beta2 * v[i] + (1.0 - opt_.beta2) * g * g);
        const double mhat = m[i] / bc1, vhat = v[i] / bc2;
        node.value[i] = static_cast<T>(node.value[i] - opt_.lr * mhat / (std::sqrt(vhat) + opt_.eps));
      }
    }
    params_.zero_grad();
  }

 private:
  ParamStore<T>& params_;
  Options opt_;
  std::vector<Tensor<T>> m_, v_;
  std::size_t step_ = 0;
};

}  // namespace otas

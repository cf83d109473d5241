#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "otas/autograd.hpp"
#include "otas/errors.hpp"
#include "otas/kernels.hpp"

namespace otas {

struct LossConfig {
  double lambda = 0.15;
  double tau = 4.0;

  void validate() const {
    if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
    if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
  }
};

struct LossTerms {
  double classification = 0;
  double smoothing = 0;
  double total = 0;
};

/// Frame cross-entropy plus the truncated smoothing penalty, over the
/// frames where mask is true:
///   L = 1/n sum_t -log p_t(y_t) + lambda/(n|Y|) sum_{t,y} min(|log p_t(y) - log p_{t-1}(y)|, tau)^2
/// Pairs are only formed between consecutive valid frames. Gradients flow
/// into both p_t and p_{t-1}.
template <class T>
Var<T> clip_loss(Tape<T>& tape, const Var<T>& logits, const std::vector<int>& labels, const std::vector<bool>& mask,
                 const LossConfig& cfg, LossTerms* terms = nullptr) {
  cfg.validate();
  const auto N = logits->value.rows(), C = logits->value.cols();
  if (labels.size() != N || mask.size() != N) throw ShapeError("clip_loss: labels/mask length mismatch");
  std::size_t n = 0;
  for (std::size_t t = 0; t < N; ++t) {
    if (!mask[t]) continue;
    if (labels[t] < 0 || static_cast<std::size_t>(labels[t]) >= C)
      throw DataError("label " + std::to_string(labels[t]) + " outside the " + std::to_string(C) + "-class space");
    ++n;
  }
  if (n == 0) throw DataError("clip_loss: no valid frames");

  const Tensor<T> logp = log_softmax_rows(logits->value);
  const T inv_n = T(1) / T(n);
  const T sm_scale = T(cfg.lambda) / (T(n) * T(C));
  const T tau = T(cfg.tau);
  T ce = 0, sm = 0;
  for (std::size_t t = 0; t < N; ++t) {
    if (!mask[t]) continue;
    ce -= logp(t, static_cast<std::size_t>(labels[t]));
    if (t > 0 && mask[t - 1])
      for (std::size_t c = 0; c < C; ++c) {
        const T d = std::abs(logp(t, c) - logp(t - 1, c));
        const T dc = d < tau ? d : tau;
        sm += dc * dc;
      }
  }
  ce *= inv_n;
  const T total = ce + sm_scale * sm;
  if (terms) *terms = {static_cast<double>(ce), static_cast<double>(sm_scale * sm), static_cast<double>(total)};

  return tape.make(Tensor<T>({1}, std::vector<T>{total}), any_requires_grad(logits),
                   [=](Node<T>* out) {
                     return [=] {
                       const T g = out->grad[0];
                       Tensor<T> dlogp({N, C});
                       for (std::size_t t = 0; t < N; ++t) {
                         if (!mask[t]) continue;
                         dlogp(t, static_cast<std::size_t>(labels[t])) -= g * inv_n;
                         if (t > 0 && mask[t - 1])
                           for (std::size_t c = 0; c < C; ++c) {
                             const T d = logp(t, c) - logp(t - 1, c);
                             if (std::abs(d) >= tau) continue;
                             const T gd = g * sm_scale * T(2) * d;
                             dlogp(t, c) += gd;
                             dlogp(t - 1, c) -= gd;
                           }
                       }
                       auto& gx = logits->grad_buffer();
                       for (std::size_t t = 0; t < N; ++t) {
                         T s = 0;
                         for (std::size_t c = 0; c < C; ++c) s += dlogp(t, c);
                         for (std::size_t c = 0; c < C; ++c) gx(t, c) += dlogp(t, c) - std::exp(logp(t, c)) * s;
                       }
                     };
                   });
}

}  // namespace otas

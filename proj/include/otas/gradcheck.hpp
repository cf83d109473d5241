#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "otas/autograd.hpp"

namespace otas {

struct GradCheckResult {
  std::string name;
  double rel_error = 0;
  double analytic_norm = 0;
};

/// Central finite differences against the tape's analytic gradient, in
/// double precision. Relative error per tensor is
/// ||analytic - numeric|| / max(||analytic||, ||numeric||), taken as zero
/// when both norms are below 1e-8 (e.g. attention key biases, which softmax
/// is invariant to).
inline std::vector<GradCheckResult> gradcheck(const std::function<Var<double>(Tape<double>&)>& loss_fn,
                                              const std::vector<std::pair<std::string, Var<double>>>& wrt,
                                              double h = 1e-4) {
  for (const auto& [_, v] : wrt) {
    v->requires_grad = true;
    v->zero_grad();
  }
  {
    Tape<double> tape(true);
    auto loss = loss_fn(tape);
    tape.backward(loss);
  }
  std::vector<GradCheckResult> results;
  for (const auto& [name, v] : wrt) {
    Tensor<double> analytic = v->grad.empty() ? Tensor<double>(v->value.shape()) : v->grad;
    double diff2 = 0, a2 = 0, n2 = 0;
    for (std::size_t i = 0; i < v->value.size(); ++i) {
      const double orig = v->value[i];
      Tape<double> off(false);
      v->value[i] = orig + h;
      const double fp = loss_fn(off)->value[0];
      v->value[i] = orig - h;
      const double fm = loss_fn(off)->value[0];
      v->value[i] = orig;
      const double numeric = (fp - fm) / (2 * h);
      diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
    }
    const double denom = std::max(std::sqrt(a2), std::sqrt(n2));
    results.push_back({name, denom < 1e-8 ? 0.0 : std::sqrt(diff2) / denom, std::sqrt(a2)});
  }
  return results;
}

}  // namespace otas

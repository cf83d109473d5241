#pragma once

#include <vector>

#include "otas/errors.hpp"
#include "otas/tensor.hpp"

namespace otas {

/// Per-frame predictions: label, confidence (max probability) and,
/// optionally, the full probability rows.
struct PredictionStream {
  std::vector<int> labels;
  std::vector<double> confidence;
  std::vector<std::vector<double>> probs;  // empty when not kept

  std::size_t size() const { return labels.size(); }
  bool has_probs() const { return !probs.empty(); }

  void push(std::vector<double> p, bool keep_probs = true) {
    if (p.empty()) throw ShapeError("empty probability row");
    std::size_t arg = 0;
    for (std::size_t c = 1; c < p.size(); ++c)
      if (p[c] > p[arg]) arg = c;
    labels.push_back(static_cast<int>(arg));
    confidence.push_back(p[arg]);
    if (keep_probs) probs.push_back(std::move(p));
  }

  void push(int label, double conf) {
    labels.push_back(label);
    confidence.push_back(conf);
  }

  PredictionStream prefix(std::size_t n) const {
    PredictionStream s;
    s.labels.assign(labels.begin(), labels.begin() + std::ptrdiff_t(n));
    s.confidence.assign(confidence.begin(), confidence.begin() + std::ptrdiff_t(n));
    if (has_probs()) s.probs.assign(probs.begin(), probs.begin() + std::ptrdiff_t(n));
    return s;
  }

  void validate(std::size_t num_classes) const {
    if (confidence.size() != labels.size() || (has_probs() && probs.size() != labels.size()))
      throw DataError("prediction stream columns have different lengths");
    for (std::size_t t = 0; t < labels.size(); ++t) {
      if (labels[t] < 0 || std::size_t(labels[t]) >= num_classes)
        throw DataError("frame " + std::to_string(t) + ": label " + std::to_string(labels[t]) + " out of range");
      if (!(confidence[t] >= 0.0 && confidence[t] <= 1.0))
        throw DataError("frame " + std::to_string(t) + ": confidence outside [0,1]");
    }
  }

  bool operator==(const PredictionStream&) const = default;
};

}  // namespace otas

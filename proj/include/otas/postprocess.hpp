#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "otas/errors.hpp"
#include "otas/metrics.hpp"
#include "otas/stream.hpp"

namespace otas {

enum class RefineRule {
  copy_counter,    // l counts consecutive copied frames, reset on every retained frame
  segment_length,  // l is the length of the current refined segment
};

struct PostProcessConfig {
  double theta = 0.9;
  double sigma = 1.0 / 16;
  std::size_t t_max = 0;
  RefineRule rule = RefineRule::copy_counter;

  void validate() const {
    if (!(theta >= 0.0 && theta <= 1.0)) throw ConfigError("theta must be in [0,1]");
    if (!(sigma > 0.0 && sigma < 1.0)) throw ConfigError("sigma must be in (0,1)");
    if (t_max == 0) throw ConfigError("T_max must be positive (take it from the training checkpoint)");
  }

  std::size_t l_min() const {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(sigma * double(t_max))));
  }
};

struct RefinedStream {
  std::vector<int> labels;
  std::vector<std::size_t> counter;
};

/// Confidence/length-gated label refinement, strictly left to right.
/// A frame whose confidence is below theta copies the previous refined label
/// while the counter is below l_min; otherwise its own label is kept.
inline RefinedStream refine(const std::vector<int>& labels, const std::vector<double>& confidence,
                            const PostProcessConfig& cfg) {
  cfg.validate();
  if (labels.empty()) throw DataError("refine: empty stream");
  if (labels.size() != confidence.size()) throw DataError("refine: label/confidence length mismatch");
  const std::size_t l_min = cfg.l_min();
  RefinedStream out;
  out.labels.resize(labels.size());
  out.counter.resize(labels.size());
  out.labels[0] = labels[0];
  std::size_t l = cfg.rule == RefineRule::copy_counter ? 0 : 1;
  out.counter[0] = l;
  for (std::size_t t = 1; t < labels.size(); ++t) {
    if (confidence[t] < cfg.theta && l < l_min) {
      out.labels[t] = out.labels[t - 1];
      ++l;
    } else {
      out.labels[t] = labels[t];
      if (cfg.rule == RefineRule::copy_counter)
        l = 0;
      else
        l = out.labels[t] == out.labels[t - 1] ? l + 1 : 1;
    }
    out.counter[t] = l;
  }
  return out;
}

inline PredictionStream refine(const PredictionStream& s, const PostProcessConfig& cfg) {
  PredictionStream out = s;
  out.labels = refine(s.labels, s.confidence, cfg).labels;
  return out;
}

struct SweepRow {
  double theta = 0, sigma = 0;
  std::size_t l_min = 0;
  MetricReport metrics;
};

/// Grid over (theta, sigma); metrics pooled over all videos per grid point.
inline std::vector<SweepRow> sweep(const std::vector<PredictionStream>& streams,
                                   const std::vector<std::vector<int>>& ground_truth, const std::vector<double>& thetas,
                                   const std::vector<double>& sigmas, std::size_t t_max, RefineRule rule = RefineRule::copy_counter) {
  if (streams.size() != ground_truth.size()) throw DataError("sweep: stream and ground-truth counts differ");
  std::vector<SweepRow> rows;
  for (double th : thetas)
    for (double sg : sigmas) {
      PostProcessConfig cfg{th, sg, t_max, rule};
      MetricAccumulator acc;
      for (std::size_t v = 0; v < streams.size(); ++v)
        acc.add(refine(streams[v].labels, streams[v].confidence, cfg).labels, ground_truth[v]);
      rows.push_back({th, sg, cfg.l_min(), acc.report()});
    }
  return rows;
}

}  // namespace otas

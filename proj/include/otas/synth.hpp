#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "otas/dataset.hpp"
#include "otas/errors.hpp"
#include "otas/metrics.hpp"
#include "otas/rng.hpp"
#include "otas/stream.hpp"
#include "otas/tensor.hpp"

namespace otas {

struct SynthConfig {
  std::size_t activities = 5;
  std::size_t actions = 8;
  std::size_t input_dim = 32;
  std::size_t train_videos = 100;
  std::size_t test_videos = 20;
  std::size_t min_length = 300;
  std::size_t max_length = 800;
  std::size_t template_length = 6;
  double skip_prob = 0.05;
  double swap_prob = 0.05;
  double duration_sigma = 0.35;
  double separation = 1.0;  // prototype norm
  double noise = 0.22;      // per-frame, per-dimension std
  double drift = 0.05;      // stationary std of a slow per-video offset
  double overlap = 0.7;     // similarity of paired action prototypes
  std::uint64_t seed = 1;

  void validate() const {
    if (activities == 0 || actions < 2 || input_dim == 0) throw ConfigError("need >=1 activity, >=2 actions, D>=1");
    if (template_length == 0) throw ConfigError("degenerate grammar: empty action template");
    if (min_length == 0 || max_length < min_length) throw ConfigError("need 1 <= min_length <= max_length");
    if (train_videos + test_videos == 0) throw ConfigError("need at least one video");
    if (!(skip_prob >= 0 && skip_prob < 1 && swap_prob >= 0 && swap_prob <= 1))
      throw ConfigError("skip_prob must be in [0,1) and swap_prob in [0,1]");
    if (!(duration_sigma >= 0 && noise >= 0 && drift >= 0 && separation > 0))
      throw ConfigError("noise, drift and duration_sigma must be >= 0, separation > 0");
    if (!(overlap >= 0 && overlap < 1)) throw ConfigError("overlap must be in [0,1)");
  }
};

/// Per-activity ordered action templates with skip/swap noise and
/// log-normal relative durations.
struct ActivityGrammar {
  std::vector<std::vector<int>> templates;
  std::size_t num_actions = 0;

  static ActivityGrammar make(const SynthConfig& cfg, Rng& rng) {
    ActivityGrammar g;
    g.num_actions = cfg.actions;
    for (std::size_t a = 0; a < cfg.activities; ++a) {
      std::vector<int> tpl;
      while (tpl.size() < cfg.template_length) {
        const int y = int(rng.below(cfg.actions));
        if (tpl.empty() || tpl.back() != y) tpl.push_back(y);
      }
      g.templates.push_back(tpl);
    }
    return g;
  }

  /// Frame labels for one video of activity `a` and length `length`.
  std::vector<int> sample(std::size_t a, std::size_t length, const SynthConfig& cfg, Rng& rng) const {
    if (templates.at(a).empty()) throw ConfigError("degenerate grammar: empty action template");
    std::vector<int> seq;
    for (int y : templates[a])
      if (!rng.bernoulli(cfg.skip_prob)) seq.push_back(y);
    if (seq.empty()) seq.push_back(templates[a].front());
    for (std::size_t i = 0; i + 1 < seq.size(); ++i)
      if (rng.bernoulli(cfg.swap_prob)) std::swap(seq[i], seq[i + 1]);
    std::vector<int> runs;
    for (int y : seq)
      if (runs.empty() || runs.back() != y) runs.push_back(y);
    if (runs.size() > length) runs.resize(length);

    std::vector<double> weight(runs.size());
    for (auto& wgt : weight) wgt = cfg.duration_sigma > 0 ? rng.lognormal(0.0, cfg.duration_sigma) : 1.0;
    const double total = std::accumulate(weight.begin(), weight.end(), 0.0);
    std::vector<std::size_t> dur(runs.size(), 1);
    std::size_t spare = length - runs.size(), used = 0;
    for (std::size_t i = 0; i < runs.size(); ++i) {
      const auto extra = static_cast<std::size_t>(std::floor(double(spare) * weight[i] / total));
      dur[i] += extra;
      used += extra;
    }
    dur.back() += spare - used;
    std::vector<int> labels;
    labels.reserve(length);
    for (std::size_t i = 0; i < runs.size(); ++i) labels.insert(labels.end(), dur[i], runs[i]);
    return labels;
  }
};

/// Prototype-plus-noise features. Actions 2i and 2i+1 have prototypes whose
/// cosine similarity is `overlap`.
struct FeatureEmitter {
  std::vector<std::vector<double>> prototypes;
  double noise = 0, drift = 0;

  static FeatureEmitter make(const SynthConfig& cfg, Rng& rng) {
    FeatureEmitter e;
    e.noise = cfg.noise;
    e.drift = cfg.drift;
    auto unit = [&] {
      std::vector<double> v(cfg.input_dim);
      for (auto& x : v) x = rng.normal();
      const double n = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
      for (auto& x : v) x /= n;
      return v;
    };
    std::vector<std::vector<double>> dirs;
    for (std::size_t a = 0; a < cfg.actions; ++a) {
      auto v = unit();
      if (a % 2 == 1) {
        // Orthogonalize against the partner, then mix at the requested cosine.
        const auto& p = dirs[a - 1];
        const double dot = std::inner_product(v.begin(), v.end(), p.begin(), 0.0);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= dot * p[i];
        const double n = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
        const double s = std::sqrt(1 - cfg.overlap * cfg.overlap);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = cfg.overlap * p[i] + s * v[i] / n;
      }
      dirs.push_back(v);
      for (auto& x : v) x *= cfg.separation;
      e.prototypes.push_back(std::move(v));
    }
    return e;
  }

  Tensor<float> emit(const std::vector<int>& labels, Rng& rng) const {
    const std::size_t D = prototypes.front().size();
    Tensor<float> x({labels.size(), D});
    // AR(1) offset with stationary std `drift`.
    const double rho = 0.98, step = drift * std::sqrt(1 - rho * rho);
    std::vector<double> offset(D);
    for (auto& o : offset) o = drift * rng.normal();
    for (std::size_t t = 0; t < labels.size(); ++t)
      for (std::size_t i = 0; i < D; ++i) {
        offset[i] = rho * offset[i] + step * rng.normal();
        x(t, i) = static_cast<float>(prototypes[std::size_t(labels[t])][i] + offset[i] + noise * rng.normal());
      }
    require_finite(x, "synthetic features");
    return x;
  }
};

inline std::string video_name(const std::string& split, std::size_t i) {
  std::string n = std::to_string(i);
  return split + "_" + std::string(n.size() < 4 ? 4 - n.size() : 0, '0') + n;
}

inline Dataset generate(const SynthConfig& cfg) {
  cfg.validate();
  Rng root(cfg.seed);
  Rng grammar_rng = root.fork(1), emitter_rng = root.fork(2);
  const auto grammar = ActivityGrammar::make(cfg, grammar_rng);
  const auto emitter = FeatureEmitter::make(cfg, emitter_rng);
  Dataset ds;
  for (std::size_t a = 0; a < cfg.actions; ++a) ds.class_names.push_back("action_" + std::to_string(a));
  const std::size_t total = cfg.train_videos + cfg.test_videos;
  for (std::size_t i = 0; i < total; ++i) {
    Rng rng = root.fork(1000 + i);
    const std::size_t length = cfg.min_length + rng.below(cfg.max_length - cfg.min_length + 1);
    const std::size_t activity = rng.below(cfg.activities);
    Video v;
    v.labels = grammar.sample(activity, length, cfg, rng);
    v.features = emitter.emit(v.labels, rng);
    const bool is_train = i < cfg.train_videos;
    v.name = video_name(is_train ? "train" : "test", is_train ? i : i - cfg.train_videos);
    (is_train ? ds.train : ds.test).push_back(std::move(v));
  }
  return ds;
}

struct ConfProfile {
  double flip_low = 0.3, flip_high = 0.8;  // confidence drawn for flipped frames
  double keep_low = 0.92, keep_high = 1.0;  // and for untouched frames
};

/// Flips round(flip_rate * T) frames to a wrong label with low confidence.
/// Flipped frames lie strictly inside runs of the input and are never
/// adjacent, so each flip splits a run. Untouched frames keep their label
/// and get a high confidence. Probabilities are not carried over.
inline PredictionStream corrupt(const PredictionStream& s, std::size_t num_classes, double flip_rate,
                                const ConfProfile& profile, std::uint64_t seed) {
  if (!(flip_rate >= 0 && flip_rate < 1)) throw ConfigError("flip_rate must be in [0,1)");
  if (num_classes < 2) throw ConfigError("corrupt needs at least two classes");
  if (flip_rate == 0) return s;
  Rng rng(seed);
  const std::size_t T = s.size();
  std::vector<std::size_t> candidates;
  for (std::size_t t = 1; t + 1 < T; ++t)
    if (s.labels[t - 1] == s.labels[t] && s.labels[t] == s.labels[t + 1]) candidates.push_back(t);
  for (std::size_t i = candidates.size(); i > 1; --i) std::swap(candidates[i - 1], candidates[rng.below(i)]);
  const auto want = static_cast<std::size_t>(std::llround(flip_rate * double(T)));
  std::vector<bool> flip(T, false);
  std::size_t picked = 0;
  for (std::size_t t : candidates) {
    if (picked == want) break;
    if (flip[t - 1] || flip[t + 1]) continue;
    flip[t] = true;
    ++picked;
  }
  PredictionStream out;
  for (std::size_t t = 0; t < T; ++t) {
    int y = s.labels[t];
    double q;
    if (flip[t]) {
      const int other = int(rng.below(num_classes - 1));
      y = other >= y ? other + 1 : other;
      q = rng.uniform(profile.flip_low, profile.flip_high);
    } else {
      q = rng.uniform(profile.keep_low, profile.keep_high);
    }
    out.push(y, q);
  }
  return out;
}

/// Stream with confidence 1 that reproduces a label sequence.
inline PredictionStream stream_from_labels(const std::vector<int>& labels) {
  PredictionStream s;
  for (int y : labels) s.push(y, 1.0);
  return s;
}

}  // namespace otas

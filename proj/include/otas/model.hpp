#pragma once

#include <string>
#include <vector>

#include "otas/autograd.hpp"
#include "otas/cfa.hpp"
#include "otas/layers.hpp"
#include "otas/memory_bank.hpp"

namespace otas {

struct ModelConfig {
  std::size_t input_dim = 32;
  std::size_t hidden_dim = 64;
  std::size_t num_classes = 8;
  std::size_t window = 128;
  std::size_t tcn_layers = 10;
  std::size_t tcn_kernel = 3;
  bool use_gru = true;
  bool use_cfa = true;
  bool use_memory = true;
  CfaConfig cfa;

  /// Copies shared sizes into the CFA sub-config.
  ModelConfig& sync() {
    cfa.hidden_dim = hidden_dim;
    cfa.window = window;
    return *this;
  }

  void validate() const {
    if (input_dim == 0 || hidden_dim == 0 || num_classes < 2 || window == 0)
      throw ConfigError("input_dim, hidden_dim and window must be positive and num_classes >= 2");
    if (tcn_layers == 0 || tcn_layers > 20) throw ConfigError("tcn_layers must be in [1, 20]");
    if (tcn_kernel == 0) throw ConfigError("tcn_kernel must be positive");
    if (cfa.hidden_dim != hidden_dim || cfa.window != window) throw ConfigError("CFA sizes out of sync with model");
    if (use_cfa) cfa.validate();
  }
};

/// Single-stage TCN with causal dilated residual layers (dilation 2^i) and a
/// 1x1 classifier.
template <class T>
struct CausalTcn {
  struct Layer {
    Conv1d<T> dilated;
    Linear<T> pointwise;
  };
  Linear<T> input;
  std::vector<Layer> layers;
  Linear<T> classifier;

  CausalTcn() = default;
  CausalTcn(ParamStore<T>& ps, std::size_t dim, std::size_t classes, std::size_t depth, std::size_t kernel, Rng& rng)
      : input(ps, "tcn.input", dim, dim, rng) {
    for (std::size_t i = 0; i < depth; ++i) {
      const std::string n = "tcn.layer" + std::to_string(i);
      ops::ConvGeometry geo{kernel, std::size_t{1} << i, true};
      layers.push_back({Conv1d<T>(ps, n + ".dilated", dim, dim, geo, rng), Linear<T>(ps, n + ".pointwise", dim, dim, rng)});
    }
    classifier = Linear<T>(ps, "tcn.classifier", dim, classes, rng);
  }

  Var<T> operator()(Tape<T>& tape, const Var<T>& x) const {
    auto h = input(tape, x);
    for (const auto& l : layers) h = ops::add(tape, h, l.pointwise(tape, ops::relu(tape, l.dilated(tape, h))));
    return classifier(tape, h);
  }
};

/// Frames [start, start+w) of x, padded by repeating the last frame.
/// Returns the clip and the number of real frames in it.
template <class T>
std::pair<Tensor<T>, std::size_t> extract_clip(const Tensor<T>& x, std::size_t start, std::size_t w) {
  if (start >= x.rows()) throw ShapeError("clip start beyond the sequence");
  const std::size_t real = std::min(w, x.rows() - start);
  Tensor<T> clip({w, x.cols()});
  for (std::size_t i = 0; i < w; ++i) {
    const auto src = x.row(start + std::min(i, real - 1));
    std::copy(src.begin(), src.end(), clip.row(i).begin());
  }
  return {clip, real};
}

inline std::size_t clip_count(std::size_t frames, std::size_t w) { return (frames + w - 1) / w; }

/// Per-video streaming state: memory bank plus GRU hidden.
template <class T>
struct StreamState {
  MemoryBank<T> bank;
  ClipState<T> clip;
};

template <class T>
struct ClipOutput {
  Var<T> logits;
  Var<T> enhanced;
  Tensor<T> context;  // c_gru values
  ClipState<T> next_clip_state;
};

/// Input projection -> GRU -> CFA with adaptive memory -> causal TCN.
template <class T>
class Segmenter {
 public:
  explicit Segmenter(ModelConfig cfg, std::uint64_t seed = 0) : cfg_(std::move(cfg.sync())) {
    cfg_.validate();
    Rng rng(seed);
    accumulator_ = ContextAccumulator<T>(params_, cfg_.input_dim, cfg_.hidden_dim, cfg_.use_gru, rng);
    if (cfg_.use_cfa) {
      cfa_ = Cfa<T>(params_, cfg_.cfa, rng);
      if (cfg_.use_memory) compressor_ = TokenCompressor<T>(params_, "memory.compress", cfg_.window, cfg_.hidden_dim, rng);
    }
    tcn_ = CausalTcn<T>(params_, cfg_.hidden_dim, cfg_.num_classes, cfg_.tcn_layers, cfg_.tcn_kernel, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  const ContextAccumulator<T>& accumulator() const { return accumulator_; }
  const Cfa<T>& cfa() const { return cfa_; }
  const TokenCompressor<T>& compressor() const { return compressor_; }
  const CausalTcn<T>& tcn() const { return tcn_; }
  bool uses_memory() const { return cfg_.use_cfa && cfg_.use_memory; }

  StreamState<T> fresh_state() const { return {MemoryBank<T>(), ClipState<T>::zeros(cfg_.hidden_dim)}; }

  /// Memory fed to the CFA as decoder query. Before the first commit the
  /// clip's own context stands in as M_0. The newest long token is
  /// recomputed inside the graph so the compressor gets a gradient.
  Var<T> memory_for(Tape<T>& tape, const MemoryBank<T>& bank, const Var<T>& c_gru) const {
    if (!uses_memory() || !bank.initialized()) return c_gru;
    if (bank.long_tokens().empty()) return leaf(bank.as_query_tokens());
    const auto& longs = bank.long_tokens();
    const std::size_t H = cfg_.hidden_dim;
    std::vector<Var<T>> parts;
    if (longs.size() > 1) {
      Tensor<T> older({longs.size() - 1, H});
      for (std::size_t i = 0; i + 1 < longs.size(); ++i)
        std::copy(longs[i].vector.begin(), longs[i].vector.end(), older.row(i).begin());
      parts.push_back(leaf(std::move(older)));
    }
    parts.push_back(compressor_(tape, leaf(bank.previous_enhanced())));
    if (bank.short_length() > 0) parts.push_back(leaf(bank.short_tokens()));
    return ops::concat_rows(tape, parts);
  }

  /// CFA + TCN on a context sequence; returns (logits, enhanced features).
  std::pair<Var<T>, Var<T>> head(Tape<T>& tape, const Var<T>& c_gru, const Var<T>& memory) const {
    auto enhanced = cfg_.use_cfa ? cfa_.augment(tape, c_gru, memory) : c_gru;
    auto logits = tcn_(tape, enhanced);
    return {logits, enhanced};
  }

  /// Runs one w-frame clip against the current state without mutating it.
  ClipOutput<T> forward_clip(Tape<T>& tape, const Tensor<T>& clip, const StreamState<T>& state) const {
    if (clip.rank() != 2 || clip.rows() != cfg_.window || clip.cols() != cfg_.input_dim)
      throw ShapeError("forward_clip expects [" + std::to_string(cfg_.window) + " x " + std::to_string(cfg_.input_dim) +
                       "], got " + shape_str(clip.shape()));
    auto c_gru = accumulator_(tape, leaf(clip), state.clip.gru_hidden);
    auto memory = memory_for(tape, state.bank, c_gru);
    auto [logits, enhanced] = head(tape, c_gru, memory);
    require_finite(logits->value, "logits");
    ClipOutput<T> out{logits, enhanced, c_gru->value, state.clip};
    if (cfg_.use_gru)
      out.next_clip_state.gru_hidden = c_gru->value.slice_rows(cfg_.window - 1, cfg_.window).reshaped({cfg_.hidden_dim});
    return out;
  }

  /// Advances the per-video state past a processed clip.
  void commit(StreamState<T>& state, const Tensor<T>& context, const Tensor<T>& enhanced,
              const ClipState<T>& next_clip_state) const {
    state.clip = next_clip_state;
    if (!uses_memory()) return;
    if (!state.bank.initialized()) state.bank = MemoryBank<T>::init(context);
    state.bank.update(compressor_.token(enhanced, state.bank.clip_counter() + 1), enhanced);
  }

  void commit(StreamState<T>& state, const ClipOutput<T>& out) const {
    commit(state, out.context, out.enhanced->value, out.next_clip_state);
  }

  /// Zeroes every parameter (used by identity/uniform-output checks).
  void zero_parameters() {
    for (auto& [_, v] : params_.items()) v->value.fill(T(0));
  }

 private:
  ModelConfig cfg_;
  ParamStore<T> params_;
  ContextAccumulator<T> accumulator_;
  Cfa<T> cfa_;
  TokenCompressor<T> compressor_;
  CausalTcn<T> tcn_;
};

}  // namespace otas

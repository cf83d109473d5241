#pragma once

#include <string>
#include <vector>

#include "otas/autograd.hpp"
#include "otas/layers.hpp"
#include "otas/memory_bank.hpp"

namespace otas {

struct CfaConfig {
  std::size_t iterations = 2;
  std::size_t decoder_layers = 2;
  std::size_t decoder_heads = 8;
  std::size_t attn_heads = 4;
  std::size_t hidden_dim = 64;
  std::size_t window = 128;
  std::size_t window_count = 2;
  std::size_t ffn_mult = 2;
  bool pre_norm = true;

  void validate() const {
    if (iterations == 0) throw ConfigError("CFA needs at least one iteration");
    if (hidden_dim == 0 || window == 0) throw ConfigError("hidden_dim and window must be positive");
    if (attn_heads == 0 || hidden_dim % attn_heads != 0)
      throw ConfigError("attention heads must divide hidden_dim");
    if (decoder_heads == 0 || hidden_dim % decoder_heads != 0)
      throw ConfigError("decoder heads must divide hidden_dim");
    if (window_count == 0 || window_count > window) throw ConfigError("window_count must be in [1, w]");
  }
};

/// Carried per-video recurrent state.
template <class T>
struct ClipState {
  Tensor<T> gru_hidden;

  static ClipState zeros(std::size_t hidden) { return {Tensor<T>({hidden})}; }
};

/// Input projection followed by the single-layer GRU that carries context
/// across clips of one video. Without the GRU it is just the projection.
template <class T>
struct ContextAccumulator {
  Linear<T> input_proj;
  Gru<T> gru;
  bool use_gru = true;

  ContextAccumulator() = default;
  ContextAccumulator(ParamStore<T>& ps, std::size_t input_dim, std::size_t hidden, bool with_gru, Rng& rng)
      : input_proj(ps, "input_proj", input_dim, hidden, rng), use_gru(with_gru) {
    if (use_gru) gru = Gru<T>(ps, "gru", hidden, hidden, rng);
  }

  Var<T> operator()(Tape<T>& tape, const Var<T>& clip, const Tensor<T>& hidden) const {
    auto x = input_proj(tape, clip);
    if (!use_gru) return x;
    return gru(tape, x, leaf(hidden));
  }

  /// Runs one clip and returns (c_gru values, state for the next clip).
  std::pair<Tensor<T>, ClipState<T>> accumulate(const Tensor<T>& clip, const ClipState<T>& state) const {
    Tape<T> tape(false);
    auto out = (*this)(tape, leaf(clip), state.gru_hidden);
    require_finite(out->value, "GRU context");
    ClipState<T> next = state;
    if (use_gru) next.gru_hidden = out->value.slice_rows(out->value.rows() - 1, out->value.rows()).reshaped({out->value.cols()});
    return {out->value, std::move(next)};
  }
};

/// One iteration: windowed self-attention on the clip, transformer-decoder
/// encoding of the memory against the clip, cross-attention from the
/// self-attended clip into the encoded memory, plus the residual.
template <class T>
struct CfaIteration {
  WindowedSelfAttention<T> self_attn;
  std::vector<TransformerDecoderLayer<T>> decoder;
  MultiHeadAttention<T> cross_attn;
  LayerNorm<T> ln_sa, ln_ca, ln_mem;
  std::size_t window_count = 2;
  bool pre_norm = true;

  CfaIteration() = default;
  CfaIteration(ParamStore<T>& ps, const std::string& name, const CfaConfig& cfg, Rng& rng)
      : self_attn(ps, name + ".sa", cfg.hidden_dim, cfg.attn_heads, cfg.window, cfg.window_count, rng),
        cross_attn(ps, name + ".ca", cfg.hidden_dim, cfg.attn_heads, cfg.window, rng),
        window_count(cfg.window_count),
        pre_norm(cfg.pre_norm) {
    for (std::size_t l = 0; l < cfg.decoder_layers; ++l)
      decoder.emplace_back(ps, name + ".td" + std::to_string(l), cfg.hidden_dim, cfg.decoder_heads,
                           cfg.ffn_mult * cfg.hidden_dim, cfg.pre_norm, rng);
    if (pre_norm) {
      ln_sa = LayerNorm<T>(ps, name + ".ln_sa", cfg.hidden_dim);
      ln_ca = LayerNorm<T>(ps, name + ".ln_ca", cfg.hidden_dim);
      ln_mem = LayerNorm<T>(ps, name + ".ln_mem", cfg.hidden_dim);
    }
  }

  Var<T> encode_memory(Tape<T>& tape, const Var<T>& memory, const Var<T>& clip) const {
    auto m = memory;
    for (const auto& layer : decoder) m = layer(tape, m, clip);
    return m;
  }

  Var<T> operator()(Tape<T>& tape, const Var<T>& x, const Var<T>& memory) const {
    auto norm = [&](const LayerNorm<T>& ln, const Var<T>& v) { return pre_norm ? ln(tape, v) : v; };
    auto sa = self_attn(tape, norm(ln_sa, x));
    auto mem = encode_memory(tape, memory, x);
    auto ca = cross_attn(tape, norm(ln_ca, sa), norm(ln_mem, mem),
                         paired_window_layout(x->value.rows(), mem->value.rows(), window_count));
    return ops::add(tape, ca, x);
  }
};

/// Context-aware feature augmentation: stacked iterations with their own
/// weights, each fed the previous iteration's output.
template <class T>
struct Cfa {
  std::vector<CfaIteration<T>> iterations;
  CfaConfig config;

  Cfa() = default;
  Cfa(ParamStore<T>& ps, const CfaConfig& cfg, Rng& rng) : config(cfg) {
    cfg.validate();
    for (std::size_t i = 0; i < cfg.iterations; ++i) iterations.emplace_back(ps, "cfa" + std::to_string(i), cfg, rng);
  }

  Var<T> augment(Tape<T>& tape, const Var<T>& c_gru, const Var<T>& memory) const {
    if (c_gru->value.rank() != 2 || memory->value.rank() != 2 || memory->value.cols() != c_gru->value.cols())
      throw ShapeError("augment: clip " + shape_str(c_gru->value.shape()) + " vs memory " +
                       shape_str(memory->value.shape()));
    if (memory->value.rows() == 0) throw ShapeError("augment: empty memory");
    auto x = c_gru;
    for (const auto& it : iterations) x = it(tape, x, memory);
    return x;
  }
};

}  // namespace otas

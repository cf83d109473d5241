#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "otas/autograd.hpp"
#include "otas/kernels.hpp"
#include "otas/rng.hpp"

namespace otas {

/// Uniform in +-1/sqrt(fan_in).
template <class T>
Tensor<T> init_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.storage()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <class T>
struct Linear {
  Var<T> weight, bias;

  Linear() = default;
  Linear(ParamStore<T>& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng, bool with_bias = true) {
    weight = ps.add(name + ".weight", init_uniform<T>({out, in}, in, rng));
    if (with_bias) bias = ps.add(name + ".bias", init_uniform<T>({out}, in, rng));
  }

  std::size_t in_features() const { return weight->value.dim(1); }
  std::size_t out_features() const { return weight->value.dim(0); }

  Var<T> operator()(Tape<T>& tape, const Var<T>& x) const { return ops::linear(tape, x, weight, bias); }
};

template <class T>
struct Conv1d {
  Var<T> weight, bias;
  ops::ConvGeometry geometry;

  Conv1d() = default;
  Conv1d(ParamStore<T>& ps, const std::string& name, std::size_t in, std::size_t out, ops::ConvGeometry geo, Rng& rng)
      : geometry(geo) {
    weight = ps.add(name + ".weight", init_uniform<T>({out, in, geo.kernel}, in * geo.kernel, rng));
    bias = ps.add(name + ".bias", init_uniform<T>({out}, in * geo.kernel, rng));
  }

  Var<T> operator()(Tape<T>& tape, const Var<T>& x) const { return ops::conv1d(tape, x, weight, bias, geometry); }
};

template <class T>
struct Gru {
  Var<T> w_ih, w_hh, b_ih, b_hh;

  Gru() = default;
  Gru(ParamStore<T>& ps, const std::string& name, std::size_t in, std::size_t hidden, Rng& rng) {
    w_ih = ps.add(name + ".w_ih", init_uniform<T>({3 * hidden, in}, hidden, rng));
    w_hh = ps.add(name + ".w_hh", init_uniform<T>({3 * hidden, hidden}, hidden, rng));
    b_ih = ps.add(name + ".b_ih", init_uniform<T>({3 * hidden}, hidden, rng));
    b_hh = ps.add(name + ".b_hh", init_uniform<T>({3 * hidden}, hidden, rng));
  }

  std::size_t hidden() const { return w_hh->value.dim(1); }

  Var<T> operator()(Tape<T>& tape, const Var<T>& x, const Var<T>& h0) const {
    return ops::gru_sequence(tape, x, h0, w_ih, w_hh, b_ih, b_hh);
  }
};

template <class T>
struct LayerNorm {
  Var<T> gamma, beta;

  LayerNorm() = default;
  LayerNorm(ParamStore<T>& ps, const std::string& name, std::size_t dim) {
    gamma = ps.add(name + ".gamma", Tensor<T>({dim}, T(1)));
    beta = ps.add(name + ".beta", Tensor<T>({dim}, T(0)));
  }

  Var<T> operator()(Tape<T>& tape, const Var<T>& x) const { return ops::layer_norm(tape, x, gamma, beta); }
};

/// Two-layer fully connected block with a ReLU in between.
template <class T>
struct FeedForward {
  Linear<T> fc1, fc2;

  FeedForward() = default;
  FeedForward(ParamStore<T>& ps, const std::string& name, std::size_t dim, std::size_t inner, Rng& rng)
      : fc1(ps, name + ".fc1", dim, inner, rng), fc2(ps, name + ".fc2", inner, dim, rng) {}

  Var<T> operator()(Tape<T>& tape, const Var<T>& x) const { return fc2(tape, ops::relu(tape, fc1(tape, x))); }
};

/// Projected multi-head attention, optionally with a learned relative-offset
/// bias table (one scalar per offset, shared across heads).
template <class T>
struct MultiHeadAttention {
  Linear<T> q, k, v, o;
  Var<T> rel_bias;
  std::size_t heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore<T>& ps, const std::string& name, std::size_t dim, std::size_t num_heads,
                     std::size_t bias_span, Rng& rng)
      : q(ps, name + ".q", dim, dim, rng),
        k(ps, name + ".k", dim, dim, rng),
        v(ps, name + ".v", dim, dim, rng),
        o(ps, name + ".o", dim, dim, rng),
        heads(num_heads) {
    if (num_heads == 0 || dim % num_heads != 0)
      throw ShapeError(name + ": " + std::to_string(num_heads) + " heads do not divide dim " + std::to_string(dim));
    // Offsets in [-(span-1), span-1].
    if (bias_span > 0) rel_bias = ps.add(name + ".rel_bias", Tensor<T>({2 * bias_span - 1}, T(0)));
  }

  Var<T> operator()(Tape<T>& tape, const Var<T>& query, const Var<T>& context, ops::AttentionLayout layout) const {
    auto Q = q(tape, query);
    auto K = k(tape, context);
    auto V = v(tape, context);
    return o(tape, ops::attention(tape, Q, K, V, heads, rel_bias, std::move(layout)));
  }

  Var<T> operator()(Tape<T>& tape, const Var<T>& query, const Var<T>& context) const {
    return (*this)(tape, query, context, ops::AttentionLayout::dense(query->value.rows(), context->value.rows()));
  }
};

/// Splits T tokens into `windows` contiguous windows of ceil(T/windows)
/// tokens; each token attends only inside its own window. A ragged last
/// window is simply shorter, which is the same as padding it and masking the
/// padded scores.
inline ops::AttentionLayout window_layout(std::size_t tokens, std::size_t windows) {
  if (windows == 0 || windows > tokens)
    throw ShapeError("window count " + std::to_string(windows) + " exceeds sequence length " + std::to_string(tokens));
  const std::size_t len = (tokens + windows - 1) / windows;
  ops::AttentionLayout l;
  for (std::size_t i = 0; i < tokens; ++i) {
    const std::size_t w = i / len;
    l.key_range.emplace_back(w * len, std::min(tokens, (w + 1) * len));
    l.query_pos.push_back(static_cast<std::ptrdiff_t>(i - w * len));
    l.key_pos.push_back(static_cast<std::ptrdiff_t>(i - w * len));
  }
  return l;
}

/// Queries in window pair {2g, 2g+1} attend to keys in the same window pair
/// (key windows are cut with the same count). With two windows this is dense.
inline ops::AttentionLayout paired_window_layout(std::size_t nq, std::size_t nk, std::size_t windows) {
  if (windows == 0) throw ShapeError("window count must be positive");
  const std::size_t lq = (nq + windows - 1) / windows;
  const std::size_t lk = (nk + windows - 1) / windows;
  ops::AttentionLayout l;
  for (std::size_t i = 0; i < nq; ++i) {
    const std::size_t group = (i / lq) / 2;
    std::size_t lo = std::min(nk, 2 * group * lk), hi = std::min(nk, (2 * group + 2) * lk);
    if (lo >= hi) lo = 0, hi = nk;
    l.key_range.emplace_back(lo, hi);
    l.query_pos.push_back(static_cast<std::ptrdiff_t>(i));
  }
  for (std::size_t j = 0; j < nk; ++j) l.key_pos.push_back(static_cast<std::ptrdiff_t>(j));
  return l;
}

/// Local-window self-attention with a relative position bias.
template <class T>
struct WindowedSelfAttention {
  MultiHeadAttention<T> attn;
  std::size_t windows = 2;

  WindowedSelfAttention() = default;
  WindowedSelfAttention(ParamStore<T>& ps, const std::string& name, std::size_t dim, std::size_t heads,
                        std::size_t tokens, std::size_t window_count, Rng& rng)
      : attn(ps, name, dim, heads, (tokens + window_count - 1) / window_count, rng), windows(window_count) {}

  Var<T> operator()(Tape<T>& tape, const Var<T>& x) const {
    return attn(tape, x, x, window_layout(x->value.rows(), windows));
  }
};

/// Self-attention over the query, cross-attention into the context, then a
/// feed-forward block; each stage is residual. `pre_norm` normalizes the
/// input of every stage.
template <class T>
struct TransformerDecoderLayer {
  MultiHeadAttention<T> self_attn, cross_attn;
  FeedForward<T> ffn;
  LayerNorm<T> ln1, ln2, ln3;
  bool pre_norm = true;

  TransformerDecoderLayer() = default;
  TransformerDecoderLayer(ParamStore<T>& ps, const std::string& name, std::size_t dim, std::size_t heads,
                          std::size_t ffn_dim, bool use_norm, Rng& rng)
      : self_attn(ps, name + ".self_attn", dim, heads, 0, rng),
        cross_attn(ps, name + ".cross_attn", dim, heads, 0, rng),
        ffn(ps, name + ".ffn", dim, ffn_dim, rng),
        pre_norm(use_norm) {
    if (pre_norm) {
      ln1 = LayerNorm<T>(ps, name + ".ln1", dim);
      ln2 = LayerNorm<T>(ps, name + ".ln2", dim);
      ln3 = LayerNorm<T>(ps, name + ".ln3", dim);
    }
  }

  Var<T> operator()(Tape<T>& tape, const Var<T>& query, const Var<T>& context) const {
    if (query->value.rows() == 0) return query;
    auto norm = [&](const LayerNorm<T>& ln, const Var<T>& x) { return pre_norm ? ln(tape, x) : x; };
    auto q1 = norm(ln1, query);
    auto x = ops::add(tape, query, self_attn(tape, q1, q1));
    x = ops::add(tape, x, cross_attn(tape, norm(ln2, x), context));
    x = ops::add(tape, x, ffn(tape, norm(ln3, x)));
    return x;
  }
};

}  // namespace otas

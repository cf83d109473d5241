#pragma once

// Differentiable primitives. Every op takes its inputs as graph values,
// computes the forward result eagerly and, when recording, registers a
// hand-derived backward closure on the tape.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <tuple>
#include <type_traits>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "otas/autograd.hpp"
#include "otas/errors.hpp"
#include "otas/tensor.hpp"

namespace otas {

namespace blas {

// All three accumulate into C, row-major, and sum over the inner index in
// ascending order so one output element never depends on how many rows
// were batched with it.

/// C[MxN] += A[MxK] * B[KxN]
template <class T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, std::size_t lda, const T* B,
             std::size_t ldb, T* C, std::size_t ldc) {
  for (std::size_t i = 0; i < M; ++i) {
    T* c = C + i * ldc;
    const T* a = A + i * lda;
    for (std::size_t k = 0; k < K; ++k) {
      const T av = a[k];
      const T* b = B + k * ldb;
      for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

/// C[MxN] += A[KxM]^T * B[KxN]
template <class T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* A, std::size_t lda, const T* B,
             std::size_t ldb, T* C, std::size_t ldc) {
  for (std::size_t k = 0; k < K; ++k) {
    const T* a = A + k * lda;
    const T* b = B + k * ldb;
    for (std::size_t i = 0; i < M; ++i) {
      const T av = a[i];
      T* c = C + i * ldc;
      for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

template <class T>
Tensor<T> transpose(const Tensor<T>& m) {
  const auto R = m.rows(), C = m.cols();
  Tensor<T> t({C, R});
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t j = 0; j < C; ++j) t(j, i) = m[i * C + j];
  return t;
}

}  // namespace blas

template <class T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  Tensor<T> out(logits.shape());
  const auto R = logits.rows(), C = logits.cols();
  for (std::size_t r = 0; r < R; ++r) {
    const T* in = logits.data() + r * C;
    T* o = out.data() + r * C;
    T m = *std::max_element(in, in + C);
    T s = 0;
    for (std::size_t c = 0; c < C; ++c) s += (o[c] = std::exp(in[c] - m));
    for (std::size_t c = 0; c < C; ++c) o[c] /= s;
  }
  return out;
}

template <class T>
Tensor<T> log_softmax_rows(const Tensor<T>& logits) {
  Tensor<T> out(logits.shape());
  const auto R = logits.rows(), C = logits.cols();
  for (std::size_t r = 0; r < R; ++r) {
    const T* in = logits.data() + r * C;
    T* o = out.data() + r * C;
    T m = *std::max_element(in, in + C);
    T s = 0;
    for (std::size_t c = 0; c < C; ++c) s += std::exp(in[c] - m);
    const T lse = m + std::log(s);
    for (std::size_t c = 0; c < C; ++c) o[c] = in[c] - lse;
  }
  return out;
}

namespace ops {

namespace detail {
template <class T>
void accumulate(const Var<T>& v, const Tensor<T>& g) {
  if (!v || !v->requires_grad) return;
  auto& buf = v->grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}
}  // namespace detail

template <class T>
Var<T> add(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
  if (a->value.shape() != b->value.shape())
    throw ShapeError("add: " + shape_str(a->value.shape()) + " vs " + shape_str(b->value.shape()));
  Tensor<T> y = a->value;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b->value[i];
  return tape.make(std::move(y), any_requires_grad(a, b), [a, b](Node<T>* out) {
    return [a, b, out] {
      detail::accumulate(a, out->grad);
      detail::accumulate(b, out->grad);
    };
  });
}

template <class T>
Var<T> relu(Tape<T>& tape, const Var<T>& x) {
  Tensor<T> y = x->value;
  for (auto& v : y.storage()) v = v > T(0) ? v : T(0);
  return tape.make(std::move(y), any_requires_grad(x), [x](Node<T>* out) {
    return [x, out] {
      auto& g = x->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (x->value[i] > T(0)) g[i] += out->grad[i];
    };
  });
}

template <class T>
Var<T> reshape(Tape<T>& tape, const Var<T>& x, Shape shape) {
  return tape.make(x->value.reshaped(std::move(shape)), any_requires_grad(x), [x](Node<T>* out) {
    return [x, out] { detail::accumulate(x, out->grad); };
  });
}

template <class T>
Var<T> slice_rows(Tape<T>& tape, const Var<T>& x, std::size_t begin, std::size_t end) {
  return tape.make(x->value.slice_rows(begin, end), any_requires_grad(x), [x, begin](Node<T>* out) {
    return [x, begin, out] {
      auto& g = x->grad_buffer();
      const auto off = begin * x->value.cols();
      for (std::size_t i = 0; i < out->grad.size(); ++i) g[off + i] += out->grad[i];
    };
  });
}

template <class T>
Var<T> concat_rows(Tape<T>& tape, const std::vector<Var<T>>& parts) {
  std::vector<const Tensor<T>*> vals;
  bool rg = false;
  for (const auto& p : parts) {
    vals.push_back(&p->value);
    rg = rg || p->requires_grad;
  }
  return tape.make(otas::concat_rows(vals), rg, [parts](Node<T>* out) {
    return [parts, out] {
      std::size_t off = 0;
      for (const auto& p : parts) {
        const auto n = p->value.size();
        if (p->requires_grad) {
          auto& g = p->grad_buffer();
          for (std::size_t i = 0; i < n; ++i) g[i] += out->grad[off + i];
        }
        off += n;
      }
    };
  });
}

/// y[N x Out] = x[N x In] * W[Out x In]^T + b
template <class T>
Var<T> linear(Tape<T>& tape, const Var<T>& x, const Var<T>& W, const std::type_identity_t<Var<T>>& b) {
  const auto N = x->value.rows(), In = x->value.cols();
  const auto Out = W->value.dim(0);
  if (W->value.rank() != 2 || W->value.dim(1) != In)
    throw ShapeError("linear: input " + shape_str(x->value.shape()) + " vs weight " + shape_str(W->value.shape()));
  Tensor<T> y({N, Out});
  if (b)
    for (std::size_t n = 0; n < N; ++n) std::copy(b->value.data(), b->value.data() + Out, y.data() + n * Out);
  const Tensor<T> Wt = blas::transpose(W->value);
  blas::gemm_nn(N, Out, In, x->value.data(), In, Wt.data(), Out, y.data(), Out);
  return tape.make(std::move(y), any_requires_grad(x, W, b), [x, W, b, N, In, Out](Node<T>* out) {
    return [x, W, b, N, In, Out, out] {
      const T* dy = out->grad.data();
      if (x->requires_grad)
        blas::gemm_nn(N, In, Out, dy, Out, W->value.data(), In, x->grad_buffer().data(), In);
      if (W->requires_grad)
        blas::gemm_tn(Out, In, N, dy, Out, x->value.data(), In, W->grad_buffer().data(), In);
      if (b && b->requires_grad) {
        auto& gb = b->grad_buffer();
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t o = 0; o < Out; ++o) gb[o] += dy[n * Out + o];
      }
    };
  });
}

struct ConvGeometry {
  std::size_t kernel = 1;
  std::size_t dilation = 1;
  bool causal = true;

  /// Input offset (relative to the output index) read by tap k.
  std::ptrdiff_t offset(std::size_t k) const {
    const auto K = static_cast<std::ptrdiff_t>(kernel);
    const auto d = static_cast<std::ptrdiff_t>(dilation);
    const auto kk = static_cast<std::ptrdiff_t>(k);
    if (causal) return (kk - (K - 1)) * d;
    return (kk - (K - 1) / 2) * d;
  }
};

/// 1-D convolution over time with zero padding that preserves length.
/// x: [T x Cin], W: [Cout x Cin x K], b: [Cout]. Causal mode pads only the
/// past side, so output t reads inputs t-(K-1)d .. t.
template <class T>
Var<T> conv1d(Tape<T>& tape, const Var<T>& x, const Var<T>& W, const std::type_identity_t<Var<T>>& b,
              ConvGeometry geo) {
  const auto& wv = W->value;
  if (wv.rank() != 3) throw ShapeError("conv1d: weights must be [out x in x taps]");
  const auto Cout = wv.dim(0), Cin = wv.dim(1), K = wv.dim(2);
  if (K != geo.kernel || geo.dilation == 0) throw ShapeError("conv1d: kernel/dilation mismatch");
  if (x->value.rank() != 2 || x->value.cols() != Cin)
    throw ShapeError("conv1d: input " + shape_str(x->value.shape()) + " vs weights " + shape_str(wv.shape()));
  const auto Tn = x->value.rows();
  if (Tn == 0) throw ShapeError("conv1d: empty input");

  // Per-tap [Cin x Cout] and [Cout x Cin] slices of the kernel.
  std::vector<Tensor<T>> taps_t(K, Tensor<T>({Cin, Cout}));
  for (std::size_t o = 0; o < Cout; ++o)
    for (std::size_t i = 0; i < Cin; ++i)
      for (std::size_t k = 0; k < K; ++k) taps_t[k](i, o) = wv(o, i, k);

  auto valid = [Tn, geo](std::size_t k) {
    const auto off = geo.offset(k);
    const auto T_ = static_cast<std::ptrdiff_t>(Tn);
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -off);
    const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(T_, T_ - off);
    return std::make_tuple(lo, hi, off);
  };

  Tensor<T> y({Tn, Cout});
  if (b)
    for (std::size_t t = 0; t < Tn; ++t) std::copy(b->value.data(), b->value.data() + Cout, y.data() + t * Cout);
  for (std::size_t k = 0; k < K; ++k) {
    auto [lo, hi, off] = valid(k);
    if (hi <= lo) continue;
    blas::gemm_nn(static_cast<std::size_t>(hi - lo), Cout, Cin, x->value.data() + (lo + off) * Cin, Cin,
                  taps_t[k].data(), Cout, y.data() + lo * Cout, Cout);
  }
  return tape.make(std::move(y), any_requires_grad(x, W, b), [x, W, b, Tn, Cin, Cout, K, valid](Node<T>* out) {
    return [x, W, b, Tn, Cin, Cout, K, valid, out] {
      const T* dy = out->grad.data();
      for (std::size_t k = 0; k < K; ++k) {
        auto [lo, hi, off] = valid(k);
        if (hi <= lo) continue;
        const auto n = static_cast<std::size_t>(hi - lo);
        if (x->requires_grad) {
          Tensor<T> tap({Cout, Cin});
          for (std::size_t o = 0; o < Cout; ++o)
            for (std::size_t i = 0; i < Cin; ++i) tap(o, i) = W->value(o, i, k);
          blas::gemm_nn(n, Cin, Cout, dy + lo * Cout, Cout, tap.data(), Cin,
                        x->grad_buffer().data() + (lo + off) * Cin, Cin);
        }
        if (W->requires_grad) {
          Tensor<T> gtap({Cout, Cin});
          blas::gemm_tn(Cout, Cin, n, dy + lo * Cout, Cout, x->value.data() + (lo + off) * Cin, Cin, gtap.data(), Cin);
          auto& gw = W->grad_buffer();
          for (std::size_t o = 0; o < Cout; ++o)
            for (std::size_t i = 0; i < Cin; ++i) gw(o, i, k) += gtap(o, i);
        }
      }
      if (b && b->requires_grad) {
        auto& gb = b->grad_buffer();
        for (std::size_t t = 0; t < Tn; ++t)
          for (std::size_t o = 0; o < Cout; ++o) gb[o] += dy[t * Cout + o];
      }
    };
  });
}

template <class T>
T sigmoid(T v) {
  return T(1) / (T(1) + std::exp(-v));
}

/// Single-layer GRU run over every row of x, starting from h0.
/// Gate layout follows the usual (reset, update, candidate) stacking:
///   r = sig(Wir x + bir + Whr h + bhr)
///   z = sig(Wiz x + biz + Whz h + bhz)
///   n = tanh(Win x + bin + r * (Whn h + bhn))
///   h' = (1 - z) * n + z * h
/// Returns all hidden states [T x H]; the last row is the carried state.
template <class T>
Var<T> gru_sequence(Tape<T>& tape, const Var<T>& x, const Var<T>& h0, const Var<T>& Wih, const Var<T>& Whh,
                    const Var<T>& bih, const Var<T>& bhh) {
  const auto Tn = x->value.rows(), In = x->value.cols();
  const auto H = h0->value.size();
  if (Wih->value.rank() != 2 || Wih->value.dim(0) != 3 * H || Wih->value.dim(1) != In ||
      Whh->value.rank() != 2 || Whh->value.dim(0) != 3 * H || Whh->value.dim(1) != H ||
      bih->value.size() != 3 * H || bhh->value.size() != 3 * H)
    throw ShapeError("gru: weight shapes do not match input " + shape_str(x->value.shape()) + " / hidden " +
                     std::to_string(H));

  const auto G = 3 * H;
  Tensor<T> gi({Tn, G});
  for (std::size_t t = 0; t < Tn; ++t) std::copy(bih->value.data(), bih->value.data() + G, gi.data() + t * G);
  {
    const Tensor<T> WihT = blas::transpose(Wih->value);
    blas::gemm_nn(Tn, G, In, x->value.data(), In, WihT.data(), G, gi.data(), G);
  }
  const Tensor<T> WhhT = blas::transpose(Whh->value);

  Tensor<T> hs({Tn, H});
  // Saved activations for backward: r, z, n, (Whn h + bhn).
  Tensor<T> saved({Tn, 4 * H});
  std::vector<T> h(h0->value.storage());
  std::vector<T> gh(G);
  for (std::size_t t = 0; t < Tn; ++t) {
    std::copy(bhh->value.data(), bhh->value.data() + G, gh.begin());
    blas::gemm_nn(std::size_t{1}, G, H, h.data(), H, WhhT.data(), G, gh.data(), G);
    const T* g = gi.data() + t * G;
    T* sv = saved.data() + t * 4 * H;
    for (std::size_t j = 0; j < H; ++j) {
      const T r = sigmoid(g[j] + gh[j]);
      const T z = sigmoid(g[H + j] + gh[H + j]);
      const T n = std::tanh(g[2 * H + j] + r * gh[2 * H + j]);
      sv[j] = r;
      sv[H + j] = z;
      sv[2 * H + j] = n;
      sv[3 * H + j] = gh[2 * H + j];
      h[j] = (T(1) - z) * n + z * h[j];
    }
    std::copy(h.begin(), h.end(), hs.data() + t * H);
  }

  return tape.make(std::move(hs), any_requires_grad(x, h0, Wih, Whh, bih, bhh),
                   [=, saved = std::move(saved)](Node<T>* out) mutable {
                     return [=, saved = std::move(saved)] {
                       Tensor<T> dgi({Tn, G});
                       std::vector<T> dh(H, T(0)), dgh(G), carry(H);
                       Tensor<T> dWhh({G, H});
                       std::vector<T> dbhh(G, T(0));
                       for (std::size_t tt = Tn; tt-- > 0;) {
                         const T* sv = saved.data() + tt * 4 * H;
                         const T* hprev = tt == 0 ? h0->value.data() : out->value.data() + (tt - 1) * H;
                         for (std::size_t j = 0; j < H; ++j) dh[j] += out->grad[tt * H + j];
                         T* dg = dgi.data() + tt * G;
                         for (std::size_t j = 0; j < H; ++j) {
                           const T r = sv[j], z = sv[H + j], n = sv[2 * H + j], ghn = sv[3 * H + j];
                           const T dn = dh[j] * (T(1) - z);
                           const T dz = dh[j] * (hprev[j] - n);
                           const T dn_pre = dn * (T(1) - n * n);
                           const T dr = dn_pre * ghn;
                           const T dr_pre = dr * r * (T(1) - r);
                           const T dz_pre = dz * z * (T(1) - z);
                           dg[j] = dr_pre;
                           dg[H + j] = dz_pre;
                           dg[2 * H + j] = dn_pre;
                           dgh[j] = dr_pre;
                           dgh[H + j] = dz_pre;
                           dgh[2 * H + j] = dn_pre * r;
                           carry[j] = dh[j] * z;
                         }
                         // dWhh += dgh^T hprev ; carry += dgh * Whh
                         blas::gemm_tn(G, H, std::size_t{1}, dgh.data(), G, hprev, H, dWhh.data(), H);
                         for (std::size_t k = 0; k < G; ++k) dbhh[k] += dgh[k];
                         blas::gemm_nn(std::size_t{1}, H, G, dgh.data(), G, Whh->value.data(), H, carry.data(), H);
                         dh = carry;
                       }
                       if (h0->requires_grad) {
                         auto& g0 = h0->grad_buffer();
                         for (std::size_t j = 0; j < H; ++j) g0[j] += dh[j];
                       }
                       if (Whh->requires_grad) detail::accumulate(Whh, dWhh);
                       if (bhh->requires_grad) {
                         auto& gb = bhh->grad_buffer();
                         for (std::size_t k = 0; k < G; ++k) gb[k] += dbhh[k];
                       }
                       if (bih->requires_grad) {
                         auto& gb = bih->grad_buffer();
                         for (std::size_t t = 0; t < Tn; ++t)
                           for (std::size_t k = 0; k < G; ++k) gb[k] += dgi[t * G + k];
                       }
                       if (Wih->requires_grad)
                         blas::gemm_tn(G, In, Tn, dgi.data(), G, x->value.data(), In, Wih->grad_buffer().data(), In);
                       if (x->requires_grad)
                         blas::gemm_nn(Tn, In, G, dgi.data(), G, Wih->value.data(), In, x->grad_buffer().data(), In);
                     };
                   });
}

/// Per-row layer normalization with learned scale and shift.
template <class T>
Var<T> layer_norm(Tape<T>& tape, const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
  const auto R = x->value.rows(), C = x->value.cols();
  if (gamma->value.size() != C || beta->value.size() != C) throw ShapeError("layer_norm: parameter size mismatch");
  Tensor<T> y(x->value.shape());
  Tensor<T> xhat(x->value.shape());
  std::vector<T> rstd(R);
  for (std::size_t r = 0; r < R; ++r) {
    const T* in = x->value.data() + r * C;
    T mean = 0;
    for (std::size_t c = 0; c < C; ++c) mean += in[c];
    mean /= T(C);
    T var = 0;
    for (std::size_t c = 0; c < C; ++c) var += (in[c] - mean) * (in[c] - mean);
    var /= T(C);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < C; ++c) {
      xhat[r * C + c] = (in[c] - mean) * rstd[r];
      y[r * C + c] = xhat[r * C + c] * gamma->value[c] + beta->value[c];
    }
  }
  return tape.make(std::move(y), any_requires_grad(x, gamma, beta),
                   [x, gamma, beta, R, C, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>* out) mutable {
                     return [x, gamma, beta, R, C, xhat = std::move(xhat), rstd = std::move(rstd), out] {
                       const T* dy = out->grad.data();
                       if (gamma->requires_grad || beta->requires_grad) {
                         auto& gg = gamma->grad_buffer();
                         auto& gb = beta->grad_buffer();
                         for (std::size_t r = 0; r < R; ++r)
                           for (std::size_t c = 0; c < C; ++c) {
                             gg[c] += dy[r * C + c] * xhat[r * C + c];
                             gb[c] += dy[r * C + c];
                           }
                       }
                       if (!x->requires_grad) return;
                       auto& gx = x->grad_buffer();
                       for (std::size_t r = 0; r < R; ++r) {
                         T m1 = 0, m2 = 0;
                         for (std::size_t c = 0; c < C; ++c) {
                           const T dxh = dy[r * C + c] * gamma->value[c];
                           m1 += dxh;
                           m2 += dxh * xhat[r * C + c];
                         }
                         m1 /= T(C);
                         m2 /= T(C);
                         for (std::size_t c = 0; c < C; ++c) {
                           const T dxh = dy[r * C + c] * gamma->value[c];
                           gx[r * C + c] += rstd[r] * (dxh - m1 - xhat[r * C + c] * m2);
                         }
                       }
                     };
                   });
}

/// Which keys each query may see, and the positions used to index the
/// relative-offset bias table.
struct AttentionLayout {
  std::vector<std::pair<std::size_t, std::size_t>> key_range;  // per query, [lo, hi)
  std::vector<std::ptrdiff_t> query_pos;
  std::vector<std::ptrdiff_t> key_pos;

  /// Every query sees every key; positions are plain indices.
  static AttentionLayout dense(std::size_t nq, std::size_t nk) {
    AttentionLayout l;
    l.key_range.assign(nq, {0, nk});
    for (std::size_t i = 0; i < nq; ++i) l.query_pos.push_back(static_cast<std::ptrdiff_t>(i));
    for (std::size_t j = 0; j < nk; ++j) l.key_pos.push_back(static_cast<std::ptrdiff_t>(j));
    return l;
  }
};

/// Table slot for the offset (query_pos - key_pos); the table is centred and
/// out-of-range offsets clamp to the ends.
inline std::size_t bias_slot(std::ptrdiff_t qpos, std::ptrdiff_t kpos, std::size_t table_size) {
  const auto centre = static_cast<std::ptrdiff_t>((table_size - 1) / 2);
  const auto idx = std::clamp<std::ptrdiff_t>(qpos - kpos + centre, 0, static_cast<std::ptrdiff_t>(table_size) - 1);
  return static_cast<std::size_t>(idx);
}

/// Multi-head scaled dot-product attention on already projected Q, K, V:
///   out_h = softmax(Q_h K_h^T / sqrt(d_h) + B) V_h
/// with an optional relative-offset bias B shared by all heads.
template <class T>
Var<T> attention(Tape<T>& tape, const Var<T>& Q, const Var<T>& K, const Var<T>& V, std::size_t heads,
                 const std::type_identity_t<Var<T>>& bias, AttentionLayout layout) {
  const auto Nq = Q->value.rows(), Nk = K->value.rows(), C = Q->value.cols();
  if (K->value.cols() != C || V->value.cols() != C || V->value.rows() != Nk)
    throw ShapeError("attention: Q " + shape_str(Q->value.shape()) + " K " + shape_str(K->value.shape()) + " V " +
                     shape_str(V->value.shape()));
  if (heads == 0 || C % heads != 0) throw ShapeError("attention: heads must divide channel count");
  if (layout.key_range.size() != Nq || layout.query_pos.size() != Nq || layout.key_pos.size() != Nk)
    throw ShapeError("attention: layout does not match Q/K sizes");
  const std::size_t table = bias ? bias->value.size() : 0;
  if (bias && table % 2 == 0) throw ShapeError("attention: relative bias table must have odd length");
  const auto dh = C / heads;
  const T scale = T(1) / std::sqrt(T(dh));

  // Probabilities, packed per (head, query) with the query's key range.
  std::vector<std::size_t> prob_off(Nq + 1, 0);
  for (std::size_t i = 0; i < Nq; ++i) {
    auto [lo, hi] = layout.key_range[i];
    if (lo >= hi || hi > Nk) throw ShapeError("attention: query has an empty or invalid key range");
    prob_off[i + 1] = prob_off[i] + (hi - lo);
  }
  std::vector<T> probs(heads * prob_off[Nq]);
  Tensor<T> y({Nq, C});
  const T* q = Q->value.data();
  const T* k = K->value.data();
  const T* v = V->value.data();
  for (std::size_t h = 0; h < heads; ++h) {
    const auto c0 = h * dh;
    for (std::size_t i = 0; i < Nq; ++i) {
      auto [lo, hi] = layout.key_range[i];
      T* p = probs.data() + h * prob_off[Nq] + prob_off[i];
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = lo; j < hi; ++j) {
        T s = 0;
        for (std::size_t c = 0; c < dh; ++c) s += q[i * C + c0 + c] * k[j * C + c0 + c];
        s *= scale;
        if (bias) s += bias->value[bias_slot(layout.query_pos[i], layout.key_pos[j], table)];
        p[j - lo] = s;
        mx = std::max(mx, s);
      }
      T sum = 0;
      for (std::size_t j = lo; j < hi; ++j) sum += (p[j - lo] = std::exp(p[j - lo] - mx));
      for (std::size_t j = lo; j < hi; ++j) p[j - lo] /= sum;
      T* o = y.data() + i * C + c0;
      for (std::size_t j = lo; j < hi; ++j) {
        const T pj = p[j - lo];
        for (std::size_t c = 0; c < dh; ++c) o[c] += pj * v[j * C + c0 + c];
      }
    }
  }

  return tape.make(
      std::move(y), any_requires_grad(Q, K, V, bias),
      [=, probs = std::move(probs), prob_off = std::move(prob_off), layout = std::move(layout)](Node<T>* out) mutable {
        return [=, probs = std::move(probs), prob_off = std::move(prob_off), layout = std::move(layout)] {
          Tensor<T> dQ({Nq, C}), dK({Nk, C}), dV({Nk, C});
          std::vector<T> dbias(table, T(0));
          const T* q = Q->value.data();
          const T* k = K->value.data();
          const T* v = V->value.data();
          const T* dy = out->grad.data();
          std::vector<T> dp;
          for (std::size_t h = 0; h < heads; ++h) {
            const auto c0 = h * dh;
            for (std::size_t i = 0; i < Nq; ++i) {
              auto [lo, hi] = layout.key_range[i];
              const T* p = probs.data() + h * prob_off[Nq] + prob_off[i];
              dp.assign(hi - lo, T(0));
              T dot = 0;
              for (std::size_t j = lo; j < hi; ++j) {
                T s = 0;
                for (std::size_t c = 0; c < dh; ++c) {
                  s += dy[i * C + c0 + c] * v[j * C + c0 + c];
                  dV[j * C + c0 + c] += p[j - lo] * dy[i * C + c0 + c];
                }
                dp[j - lo] = s;
                dot += s * p[j - lo];
              }
              for (std::size_t j = lo; j < hi; ++j) {
                const T ds = p[j - lo] * (dp[j - lo] - dot);
                if (table) dbias[bias_slot(layout.query_pos[i], layout.key_pos[j], table)] += ds;
                const T dss = ds * scale;
                for (std::size_t c = 0; c < dh; ++c) {
                  dQ[i * C + c0 + c] += dss * k[j * C + c0 + c];
                  dK[j * C + c0 + c] += dss * q[i * C + c0 + c];
                }
              }
            }
          }
          detail::accumulate(Q, dQ);
          detail::accumulate(K, dK);
          detail::accumulate(V, dV);
          if (bias && bias->requires_grad) {
            auto& gb = bias->grad_buffer();
            for (std::size_t s = 0; s < table; ++s) gb[s] += dbias[s];
          }
        };
      });
}

/// Scalar sum(x * R) for a fixed tensor R; used to probe gradients.
template <class T>
Var<T> weighted_sum(Tape<T>& tape, const Var<T>& x, const Tensor<T>& R) {
  if (R.size() != x->value.size()) throw ShapeError("weighted_sum: size mismatch");
  T s = 0;
  for (std::size_t i = 0; i < R.size(); ++i) s += x->value[i] * R[i];
  return tape.make(Tensor<T>({1}, std::vector<T>{s}), any_requires_grad(x), [x, R](Node<T>* out) {
    return [x, R, out] {
      auto& g = x->grad_buffer();
      for (std::size_t i = 0; i < R.size(); ++i) g[i] += out->grad[0] * R[i];
    };
  });
}

/// Scalar sum((x - target)^2).
template <class T>
Var<T> squared_error(Tape<T>& tape, const Var<T>& x, const Tensor<T>& target) {
  if (target.size() != x->value.size()) throw ShapeError("squared_error: size mismatch");
  T s = 0;
  for (std::size_t i = 0; i < target.size(); ++i) s += (x->value[i] - target[i]) * (x->value[i] - target[i]);
  return tape.make(Tensor<T>({1}, std::vector<T>{s}), any_requires_grad(x), [x, target](Node<T>* out) {
    return [x, target, out] {
      auto& g = x->grad_buffer();
      for (std::size_t i = 0; i < target.size(); ++i) g[i] += out->grad[0] * T(2) * (x->value[i] - target[i]);
    };
  });
}

}  // namespace ops
}  // namespace otas

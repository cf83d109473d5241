#pragma once

#include <cstddef>
#include <deque>
#include <string>
#include <vector>

#include "otas/autograd.hpp"
#include "otas/errors.hpp"
#include "otas/kernels.hpp"
#include "otas/layers.hpp"
#include "otas/tensor.hpp"

namespace otas {

template <class T>
struct MemoryToken {
  std::vector<T> vector;
  std::size_t source_clip = 0;

  friend bool operator==(const MemoryToken&, const MemoryToken&) = default;
};

/// Short/long-term token store with a fixed budget of `w` tokens.
///
/// Long-term tokens are one compressed vector per processed clip, kept FIFO
/// while 3*len <= 2w (so at most floor(2w/3)+1 of them). The rest of the
/// budget is the tail of the previous clip's enhanced features.
template <class T>
class MemoryBank {
 public:
  MemoryBank() = default;

  /// Bank holding only the embedded first clip as short-term memory.
  static MemoryBank init(const Tensor<T>& first_clip_embedded) {
    if (first_clip_embedded.rank() != 2 || first_clip_embedded.rows() == 0)
      throw ShapeError("memory init expects a non-empty [w x H] clip, got " + shape_str(first_clip_embedded.shape()));
    MemoryBank b;
    b.budget_ = first_clip_embedded.rows();
    b.dim_ = first_clip_embedded.cols();
    b.short_ = first_clip_embedded;
    b.previous_ = first_clip_embedded;
    return b;
  }

  /// Largest long-term length reachable for a budget of w tokens.
  static std::size_t long_capacity(std::size_t w) { return (2 * w) / 3 + 1; }

  /// Appends m_k (dropping the oldest token once past 2w/3), then refills
  /// the short-term part from the previous clip's enhanced features.
  void update(MemoryToken<T> token, const Tensor<T>& enhanced) {
    if (!initialized()) throw std::logic_error("memory bank used before init");
    if (token.vector.size() != dim_) throw ShapeError("memory token has wrong dimension");
    if (enhanced.rank() != 2 || enhanced.rows() != budget_ || enhanced.cols() != dim_)
      throw ShapeError("memory update expects [" + std::to_string(budget_) + " x " + std::to_string(dim_) +
                       "], got " + shape_str(enhanced.shape()));
    if (3 * long_.size() > 2 * budget_) long_.pop_front();
    long_.push_back(std::move(token));
    const std::size_t keep = std::min(long_.size(), budget_);
    short_ = previous_.slice_rows(keep, budget_);
    previous_ = enhanced;
    ++clip_;
  }

  /// [long tokens ; short tokens] as a [w x H] tensor.
  Tensor<T> as_query_tokens() const {
    if (!initialized()) throw std::logic_error("memory bank read before init");
    Tensor<T> out({long_.size() + short_.rows(), dim_});
    std::size_t r = 0;
    for (const auto& tok : long_) std::copy(tok.vector.begin(), tok.vector.end(), out.row(r++).begin());
    std::copy(short_.storage().begin(), short_.storage().end(), out.data() + r * dim_);
    return out;
  }

  bool initialized() const { return budget_ > 0; }
  std::size_t budget() const { return budget_; }
  std::size_t dim() const { return dim_; }
  std::size_t clip_counter() const { return clip_; }
  const std::deque<MemoryToken<T>>& long_tokens() const { return long_; }
  const Tensor<T>& short_tokens() const { return short_; }
  std::size_t short_length() const { return short_.rows(); }
  /// Enhanced features of the most recent clip (feeds the next short slice).
  const Tensor<T>& previous_enhanced() const { return previous_; }

  /// Rebuilds a bank from serialized parts; checks the budget invariant.
  static MemoryBank restore(std::size_t budget, std::size_t dim, std::size_t clip, std::deque<MemoryToken<T>> longs,
                            Tensor<T> shorts, Tensor<T> previous) {
    MemoryBank b;
    b.budget_ = budget;
    b.dim_ = dim;
    b.clip_ = clip;
    b.long_ = std::move(longs);
    b.short_ = std::move(shorts);
    b.previous_ = std::move(previous);
    if (b.long_.size() + b.short_.rows() != budget || b.previous_.rows() != budget)
      throw DataError("serialized memory bank violates its token budget");
    return b;
  }

  friend bool operator==(const MemoryBank& a, const MemoryBank& b) {
    return a.budget_ == b.budget_ && a.dim_ == b.dim_ && a.clip_ == b.clip_ && a.long_ == b.long_ &&
           a.short_ == b.short_ && a.previous_ == b.previous_;
  }

 private:
  std::size_t budget_ = 0;
  std::size_t dim_ = 0;
  std::size_t clip_ = 0;
  std::deque<MemoryToken<T>> long_;
  Tensor<T> short_;
  Tensor<T> previous_;
};

/// Collapses a [w x H] clip into one H-dim token with a convolution whose
/// kernel spans the whole window (no padding, single output step). The
/// kernel is stored flattened as [H_out x (w*H_in)], index t*H + i.
template <class T>
struct TokenCompressor {
  Linear<T> conv;
  std::size_t window = 0;

  TokenCompressor() = default;
  TokenCompressor(ParamStore<T>& ps, const std::string& name, std::size_t w, std::size_t dim, Rng& rng)
      : conv(ps, name, w * dim, dim, rng), window(w) {}

  Var<T> operator()(Tape<T>& tape, const Var<T>& enhanced) const {
    if (enhanced->value.rank() != 2 || enhanced->value.rows() != window)
      throw ShapeError("compress expects exactly " + std::to_string(window) + " frames, got " +
                       shape_str(enhanced->value.shape()));
    return conv(tape, ops::reshape(tape, enhanced, {1, enhanced->value.size()}));
  }

  MemoryToken<T> token(const Tensor<T>& enhanced, std::size_t clip) const {
    Tape<T> tape(false);
    auto v = (*this)(tape, leaf(enhanced));
    return {v->value.storage(), clip};
  }
};

}  // namespace otas

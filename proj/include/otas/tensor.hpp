#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "otas/errors.hpp"

namespace otas {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

/// Dense row-major array of rank <= 3.
///
/// Rank-1 is [channels], rank-2 is [time x channels], rank-3 is
/// [batch x time x channels] or a conv kernel [out x in x taps].
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
    check_rank();
    data_.assign(shape_numel(shape_), fill);
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_rank();
    if (data_.size() != shape_numel(shape_))
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<T> values) {
    return Tensor({rows, cols}, std::vector<T>(values));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  /// Rows/cols view the tensor as a matrix: leading dims are folded into rows.
  std::size_t rows() const {
    if (shape_.empty()) return 0;
    return shape_.size() == 1 ? 1 : data_.size() / shape_.back();
  }
  std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const T& operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  T& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  const T& operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  std::span<T> row(std::size_t i) { return {data_.data() + i * cols(), cols()}; }
  std::span<const T> row(std::size_t i) const { return {data_.data() + i * cols(), cols()}; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(Shape s) const {
    if (shape_numel(s) != data_.size())
      throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
    return Tensor(std::move(s), data_);
  }

  /// Rows [begin, end) of a rank-2 tensor.
  Tensor slice_rows(std::size_t begin, std::size_t end) const {
    if (rank() != 2 || begin > end || end > shape_[0])
      throw ShapeError("slice_rows out of range on " + shape_str(shape_));
    const auto c = cols();
    return Tensor({end - begin, c}, std::vector<T>(data_.begin() + static_cast<std::ptrdiff_t>(begin * c),
                                                   data_.begin() + static_cast<std::ptrdiff_t>(end * c)));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
    return Tensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_rank() const {
    if (shape_.size() > 3) throw ShapeError("tensor rank above 3: " + shape_str(shape_));
  }

  Shape shape_;
  std::vector<T> data_;
};

template <class T>
Tensor<T> concat_rows(const std::vector<const Tensor<T>*>& parts) {
  std::size_t rows = 0, cols = 0;
  for (const auto* p : parts) {
    if (p->empty()) continue;
    if (cols != 0 && p->cols() != cols) throw ShapeError("concat_rows: column mismatch");
    cols = p->cols();
    rows += p->rows();
  }
  std::vector<T> data;
  data.reserve(rows * cols);
  for (const auto* p : parts) data.insert(data.end(), p->storage().begin(), p->storage().end());
  return Tensor<T>({rows, cols}, std::move(data));
}

template <class T>
void require_finite(const Tensor<T>& t, const char* what) {
  if (!t.all_finite()) throw NumericError(std::string("non-finite values in ") + what);
}

template <class T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("max_abs_diff: shape mismatch");
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace otas

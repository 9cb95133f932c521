#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"

namespace rx {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::int64_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Dense row-major array. Plain value type; graph membership is tracked by
// `Var` handles, not by the tensor itself.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{}) : shape_(std::move(shape)) {
    check_shape();
    values_.assign(static_cast<std::size_t>(numel(shape_)), fill);
  }
  Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), values_(std::move(values)) {
    check_shape();
    if (numel(shape_) != static_cast<std::int64_t>(values_.size()))
      throw ShapeError(detail::cat("tensor: shape ", to_string(shape_), " holds ", numel(shape_),
                                   " values, got ", values_.size()));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }

  const Shape& shape() const noexcept { return shape_; }
  std::int64_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::int64_t size() const noexcept { return static_cast<std::int64_t>(values_.size()); }
  bool empty() const noexcept { return values_.empty(); }

  std::span<T> values() noexcept { return values_; }
  std::span<const T> values() const noexcept { return values_; }
  T* data() noexcept { return values_.data(); }
  const T* data() const noexcept { return values_.data(); }
  std::vector<T>& storage() noexcept { return values_; }
  const std::vector<T>& storage() const noexcept { return values_; }

  T& operator[](std::int64_t i) { return values_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return values_[static_cast<std::size_t>(i)]; }

  // NCHW indexing helper for 4-d tensors.
  T& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return values_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  const T& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return values_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }

  Tensor reshaped(Shape s) const {
    if (numel(s) != size())
      throw ShapeError(detail::cat("reshape: cannot view ", to_string(shape_), " as ", to_string(s)));
    return Tensor(std::move(s), values_);
  }

  // Rows [begin, end) along the leading axis.
  Tensor slice_rows(std::int64_t begin, std::int64_t end) const {
    if (shape_.empty() || begin < 0 || end > shape_[0] || begin > end)
      throw ShapeError(detail::cat("slice_rows: [", begin, ",", end, ") out of ", to_string(shape_)));
    Shape s = shape_;
    s[0] = end - begin;
    const std::int64_t row = shape_[0] ? size() / shape_[0] : 0;
    return Tensor(std::move(s), std::vector<T>(values_.begin() + begin * row, values_.begin() + end * row));
  }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](T v) { return std::isfinite(v); });
  }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(values_.begin(), values_.end()));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

 private:
  void check_shape() const {
    for (auto d : shape_)
      if (d < 0) throw ShapeError("tensor: negative dimension in " + to_string(shape_));
  }

  Shape shape_;
  std::vector<T> values_;
};

// Stack single-sample tensors (leading dim 1 or unbatched) along a new/leading axis.
template <typename T>
Tensor<T> stack_rows(std::span<const Tensor<T>> rows) {
  if (rows.empty()) return {};
  Shape inner = rows.front().shape();
  if (!inner.empty() && inner[0] == 1) inner.erase(inner.begin());
  Shape s = inner;
  s.insert(s.begin(), static_cast<std::int64_t>(rows.size()));
  std::vector<T> v;
  v.reserve(static_cast<std::size_t>(numel(s)));
  for (const auto& r : rows) {
    if (r.size() != numel(inner))
      throw ShapeError(detail::cat("stack_rows: row of shape ", to_string(r.shape()),
                                   " does not match ", to_string(inner)));
    v.insert(v.end(), r.values().begin(), r.values().end());
  }
  return Tensor<T>(std::move(s), std::move(v));
}

template <typename T>
Tensor<T> stack_rows(const std::vector<Tensor<T>>& rows) {
  return stack_rows(std::span<const Tensor<T>>(rows));
}

template <typename T>
double max_abs(std::span<const T> v) {
  double m = 0;
  for (T x : v) m = std::max(m, std::abs(static_cast<double>(x)));
  return m;
}

template <typename T>
double l2_norm(std::span<const T> v) {
  double s = 0;
  for (T x : v) s += static_cast<double>(x) * static_cast<double>(x);
  return std::sqrt(s);
}

template <typename T>
double l1_norm(std::span<const T> v) {
  double s = 0;
  for (T x : v) s += std::abs(static_cast<double>(x));
  return s;
}

}  // namespace rx

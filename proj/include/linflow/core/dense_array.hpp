#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace linflow {

using Shape = std::vector<std::size_t>;

/// Thrown when operand shapes do not conform to an operation's contract.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when an operation observes NaN or infinity where finite values are required.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

/// N-dimensional row-major array of real scalars. The universal value type:
/// model parameters, activations, trajectory states and gradients are all
/// DenseArrays. Value semantics; copying copies the payload.
template <typename T>
class DenseArray {
 public:
  using value_type = T;

  DenseArray() = default;

  explicit DenseArray(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

  DenseArray(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_)) {
      throw ShapeError("DenseArray: data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
    }
  }

  static DenseArray scalar(T v) { return DenseArray({1}, std::vector<T>{v}); }

  static DenseArray from_rows(std::initializer_list<std::initializer_list<T>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<T> d;
    d.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("DenseArray::from_rows: ragged rows");
      d.insert(d.end(), row.begin(), row.end());
    }
    return DenseArray({r, c}, std::move(d));
  }

  static DenseArray identity(std::size_t n) {
    DenseArray a({n, n});
    for (std::size_t i = 0; i < n; ++i) a(i, i) = T(1);
    return a;
  }

  template <typename Rng>
  static DenseArray randn(Shape shape, Rng& rng, T stddev = T(1)) {
    DenseArray a(std::move(shape));
    std::normal_distribution<T> dist(T(0), stddev);
    for (auto& v : a.data_) v = dist(rng);
    return a;
  }

  template <typename Rng>
  static DenseArray uniform(Shape shape, Rng& rng, T lo, T hi) {
    DenseArray a(std::move(shape));
    std::uniform_real_distribution<T> dist(lo, hi);
    for (auto& v : a.data_) v = dist(rng);
    return a;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t dim(int axis) const {
    const int r = static_cast<int>(shape_.size());
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) throw ShapeError("DenseArray::dim: axis out of range for " + shape_str(shape_));
    return shape_[static_cast<std::size_t>(a)];
  }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * shape_.back() + j]; }
  const T& operator()(std::size_t i, std::size_t j) const noexcept {
    return data_[i * shape_.back() + j];
  }
  T& operator()(std::size_t b, std::size_t i, std::size_t j) noexcept {
    return data_[(b * shape_[1] + i) * shape_[2] + j];
  }
  const T& operator()(std::size_t b, std::size_t i, std::size_t j) const noexcept {
    return data_[(b * shape_[1] + i) * shape_[2] + j];
  }

  /// Same payload viewed under a new shape with equal element count.
  DenseArray reshaped(Shape s) const& {
    if (shape_numel(s) != numel()) {
      throw ShapeError("reshape: cannot view " + shape_str(shape_) + " as " + shape_str(s));
    }
    return DenseArray(std::move(s), data_);
  }
  DenseArray reshaped(Shape s) && {
    if (shape_numel(s) != numel()) {
      throw ShapeError("reshape: cannot view " + shape_str(shape_) + " as " + shape_str(s));
    }
    return DenseArray(std::move(s), std::move(data_));
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <typename U>
  DenseArray<U> cast() const {
    std::vector<U> d(data_.begin(), data_.end());
    return DenseArray<U>(shape_, std::move(d));
  }

  friend bool operator==(const DenseArray& a, const DenseArray& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
T max_abs_diff(const DenseArray<T>& a, const DenseArray<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  T m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

template <typename T>
T max_abs(const DenseArray<T>& a) {
  T m = 0;
  for (T v : a.values()) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace linflow

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>

#include "linflow/core/dense_array.hpp"
#include "linflow/core/kernels.hpp"
#include "linflow/grad/tape.hpp"

namespace linflow {

namespace detail {

// Elementwise broadcasting is limited to four cases: equal shapes, a
// single-element operand, an operand whose shape is a suffix of the other
// (leading expansion, e.g. a bias row) and an operand equal to the other
// except for a last extent of 1 (trailing expansion, e.g. a per-row divisor).
enum class Bcast { kSame, kScalar, kLeading, kRow };

struct Operand {
  Bcast mode = Bcast::kSame;
  std::size_t period = 1;

  std::size_t operator()(std::size_t i) const noexcept {
    switch (mode) {
      case Bcast::kSame: return i;
      case Bcast::kScalar: return 0;
      case Bcast::kLeading: return i % period;
      case Bcast::kRow: return i / period;
    }
    return i;
  }
};

inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() >= big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

inline bool is_row_of(const Shape& small, const Shape& big) {
  if (small.size() != big.size() || big.empty() || small.back() != 1) return false;
  return std::equal(small.begin(), small.end() - 1, big.begin());
}

inline Operand classify(const Shape& s, const Shape& out) {
  if (s == out) return {Bcast::kSame, 1};
  if (shape_numel(s) == 1) return {Bcast::kScalar, 1};
  if (is_suffix(s, out)) return {Bcast::kLeading, shape_numel(s)};
  if (is_row_of(s, out)) return {Bcast::kRow, out.back()};
  return {Bcast::kSame, 0};
}

inline Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return a;
  const std::size_t na = shape_numel(a);
  const std::size_t nb = shape_numel(b);
  if (nb == 1) return a;
  if (na == 1) return b;
  if (is_suffix(b, a) || is_row_of(b, a)) return a;
  if (is_suffix(a, b) || is_row_of(a, b)) return b;
  throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
}

/// Sums an output-shaped gradient back onto an operand's shape.
template <typename T>
DenseArray<T> reduce_to(const DenseArray<T>& g, const Shape& target) {
  if (g.shape() == target) return g;
  const Operand idx = classify(target, g.shape());
  DenseArray<T> out(target);
  for (std::size_t i = 0; i < g.numel(); ++i) out[idx(i)] += g[i];
  return out;
}

template <typename T, typename F>
DenseArray<T> map(const DenseArray<T>& a, F f) {
  DenseArray<T> out(a.shape());
  const T* src = a.data();
  T* dst = out.data();
  for (std::size_t i = 0; i < a.numel(); ++i) dst[i] = f(src[i]);
  return out;
}

// (outer, len, inner) decomposition for reductions along `axis`.
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1, axis = 0;
};

inline AxisSplit split_axis(const char* op, const Shape& s, int axis) {
  const int r = static_cast<int>(s.size());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                     shape_str(s));
  }
  AxisSplit sp;
  sp.axis = static_cast<std::size_t>(a);
  for (std::size_t i = 0; i < sp.axis; ++i) sp.outer *= s[i];
  sp.len = s[sp.axis];
  for (std::size_t i = sp.axis + 1; i < s.size(); ++i) sp.inner *= s[i];
  return sp;
}

template <typename T>
void check_same_tape(const char* op, Var<T> a, Var<T> b) {
  if (&a.tape() != &b.tape()) throw std::logic_error(std::string(op) + ": operands on different tapes");
}

// Elementwise binary op with broadcasting. `da`/`db` give the local partials
// given (a, b) scalars.
template <typename T, typename F, typename DA, typename DB>
Var<T> binary(const char* name, Var<T> a, Var<T> b, F f, DA da, DB db) {
  check_same_tape(name, a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  Shape out_shape = broadcast_shape(name, av.shape(), bv.shape());
  const Operand ia = classify(av.shape(), out_shape);
  const Operand ib = classify(bv.shape(), out_shape);
  DenseArray<T> out(out_shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = f(av[ia(i)], bv[ib(i)]);
  return a.tape().record(
      name, std::move(out), {a, b},
      [ia, ib, da, db](Tape<T>& tape, const typename Tape<T>::Node& node, const DenseArray<T>& g) {
        const auto& av = tape.slot_value(node.inputs[0]);
        const auto& bv = tape.slot_value(node.inputs[1]);
        if (tape.slot_requires_grad(node.inputs[0])) {
          DenseArray<T> ga(g.shape());
          for (std::size_t i = 0; i < g.numel(); ++i) ga[i] = g[i] * da(av[ia(i)], bv[ib(i)]);
          tape.accumulate(node.inputs[0], reduce_to(ga, av.shape()));
        }
        if (tape.slot_requires_grad(node.inputs[1])) {
          DenseArray<T> gb(g.shape());
          for (std::size_t i = 0; i < g.numel(); ++i) gb[i] = g[i] * db(av[ia(i)], bv[ib(i)]);
          tape.accumulate(node.inputs[1], reduce_to(gb, bv.shape()));
        }
      });
}

// Elementwise unary op; `d(x, y)` is the local derivative given input and output.
template <typename T, typename F, typename D>
Var<T> unary(const char* name, Var<T> a, F f, D d) {
  DenseArray<T> out = map(a.value(), f);
  return a.tape().record(
      name, std::move(out), {a},
      [d](Tape<T>& tape, const typename Tape<T>::Node& node, const DenseArray<T>& g) {
        const auto& x = tape.slot_value(node.inputs[0]);
        const auto& y = tape.slot_value(node.output);
        DenseArray<T> gx(x.shape());
        for (std::size_t i = 0; i < x.numel(); ++i) gx[i] = g[i] * d(x[i], y[i]);
        tape.accumulate(node.inputs[0], std::move(gx));
      });
}

}  // namespace detail

// ---- elementwise arithmetic ------------------------------------------------

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  return detail::binary<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
      [](T, T) { return T(1); });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  return detail::binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
      [](T, T) { return T(-1); });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  return detail::binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
      [](T x, T) { return x; });
}

template <typename T>
Var<T> div(Var<T> a, Var<T> b) {
  return detail::binary<T>(
      "div", a, b, [](T x, T y) { return x / y; }, [](T, T y) { return T(1) / y; },
      [](T x, T y) { return -x / (y * y); });
}

template <typename T>
Var<T> neg(Var<T> a) {
  return detail::unary<T>(
      "neg", a, [](T x) { return -x; }, [](T, T) { return T(-1); });
}

template <typename T>
Var<T> add_scalar(Var<T> a, T c) {
  return detail::unary<T>(
      "add_scalar", a, [c](T x) { return x + c; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> mul_scalar(Var<T> a, T c) {
  return detail::unary<T>(
      "mul_scalar", a, [c](T x) { return x * c; }, [c](T, T) { return c; });
}

template <typename T>
Var<T> exp(Var<T> a) {
  return detail::unary<T>(
      "exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> abs(Var<T> a) {
  return detail::unary<T>(
      "abs", a, [](T x) { return std::abs(x); },
      [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

/// x^p elementwise for a real exponent; non-integer p needs x >= 0.
template <typename T>
Var<T> pow(Var<T> a, T p) {
  return detail::unary<T>(
      "pow", a, [p](T x) { return std::pow(x, p); },
      [p](T x, T) {
        if (p == T(0)) return T(0);
        if (x == T(0)) return p == T(1) ? T(1) : (p > T(1) ? T(0) : T(INFINITY));
        return p * std::pow(x, p - T(1));
      });
}

template <typename T>
Var<T> silu(Var<T> a) {
  return detail::unary<T>(
      "silu", a, [](T x) { return x / (T(1) + std::exp(-x)); },
      [](T x, T) {
        const T s = T(1) / (T(1) + std::exp(-x));
        return s * (T(1) + x * (T(1) - s));
      });
}

/// Clamp into [lo, hi]; gradient passes where lo <= x <= hi and is zero outside.
template <typename T>
Var<T> clip(Var<T> a, T lo, T hi) {
  return detail::unary<T>(
      "clip", a, [lo, hi](T x) { return std::clamp(x, lo, hi); },
      [lo, hi](T x, T) { return (x >= lo && x <= hi) ? T(1) : T(0); });
}

template <typename T> Var<T> operator+(Var<T> a, Var<T> b) { return add(a, b); }
template <typename T> Var<T> operator-(Var<T> a, Var<T> b) { return sub(a, b); }
template <typename T> Var<T> operator*(Var<T> a, Var<T> b) { return mul(a, b); }
template <typename T> Var<T> operator/(Var<T> a, Var<T> b) { return div(a, b); }
template <typename T> Var<T> operator-(Var<T> a) { return neg(a); }
template <typename T> Var<T> operator*(Var<T> a, T c) { return mul_scalar(a, c); }
template <typename T> Var<T> operator*(T c, Var<T> a) { return mul_scalar(a, c); }
template <typename T> Var<T> operator+(Var<T> a, T c) { return add_scalar(a, c); }
template <typename T> Var<T> operator+(T c, Var<T> a) { return add_scalar(a, c); }
template <typename T> Var<T> operator-(Var<T> a, T c) { return add_scalar(a, -c); }
template <typename T> Var<T> operator-(T c, Var<T> a) { return add_scalar(neg(a), c); }

// ---- structural ---------------------------------------------------------------

template <typename T>
Var<T> reshape(Var<T> a, Shape s) {
  DenseArray<T> out = a.value().reshaped(std::move(s));
  return a.tape().record("reshape", std::move(out), {a},
                         [](Tape<T>& tape, const typename Tape<T>::Node& node, const DenseArray<T>& g) {
                           tape.accumulate(node.inputs[0],
                                           g.reshaped(tape.slot_value(node.inputs[0]).shape()));
                         });
}

namespace detail {
template <typename T>
DenseArray<T> transpose_last2(const DenseArray<T>& x) {
  if (x.rank() < 2) throw ShapeError("transpose: rank < 2 for " + shape_str(x.shape()));
  Shape s = x.shape();
  const std::size_t r = s[s.size() - 2], c = s.back();
  std::swap(s[s.size() - 2], s.back());
  DenseArray<T> out(s);
  const std::size_t batch = x.numel() / (r * c);
  for (std::size_t b = 0; b < batch; ++b) {
    const T* src = x.data() + b * r * c;
    T* dst = out.data() + b * r * c;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) dst[j * r + i] = src[i * c + j];
  }
  return out;
}
}  // namespace detail

/// Swaps the last two axes.
template <typename T>
Var<T> transpose(Var<T> a) {
  return a.tape().record("transpose", detail::transpose_last2(a.value()), {a},
                         [](Tape<T>& tape, const typename Tape<T>::Node& node, const DenseArray<T>& g) {
                           tape.accumulate(node.inputs[0], detail::transpose_last2(g));
                         });
}

/// Concatenation along the last axis; all other extents must agree.
template <typename T>
Var<T> concat_last(Var<T> a, Var<T> b) {
  detail::check_same_tape("concat_last", a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != bv.rank() || av.rank() == 0 ||
      !std::equal(av.shape().begin(), av.shape().end() - 1, bv.shape().begin())) {
    throw ShapeError("concat_last: " + shape_str(av.shape()) + " with " + shape_str(bv.shape()));
  }
  const std::size_t ca = av.shape().back(), cb = bv.shape().back();
  const std::size_t rows = av.numel() / ca;
  Shape s = av.shape();
  s.back() = ca + cb;
  DenseArray<T> out(s);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(av.data() + r * ca, ca, out.data() + r * (ca + cb));
    std::copy_n(bv.data() + r * cb, cb, out.data() + r * (ca + cb) + ca);
  }
  return a.tape().record(
      "concat_last", std::move(out), {a, b},
      [ca, cb, rows](Tape<T>& tape, const typename Tape<T>::Node& node, const DenseArray<T>& g) {
        DenseArray<T> ga(tape.slot_value(node.inputs[0]).shape());
        DenseArray<T> gb(tape.slot_value(node.inputs[1]).shape());
        for (std::size_t r = 0; r < rows; ++r) {
          std::copy_n(g.data() + r * (ca + cb), ca, ga.data() + r * ca);
          std::copy_n(g.data() + r * (ca + cb) + ca, cb, gb.data() + r * cb);
        }
        tape.accumulate(node.inputs[0], std::move(ga));
        tape.accumulate(node.inputs[1], std::move(gb));
      });
}

// ---- linear algebra -------------------------------------------------------------

/// a[..., n, k] · b[k, m] (shared right operand) or a[B.., n, k] · b[B.., k, m]
/// (batched, identical leading extents).
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  detail::check_same_tape("matmul", a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  auto fail = [&] {
    throw ShapeError("matmul: cannot multiply " + shape_str(av.shape()) + " by " +
                     shape_str(bv.shape()));
  };
  if (av.rank() < 2 || bv.rank() < 2) fail();
  const std::size_t n = av.dim(-2), k = av.dim(-1);
  if (bv.dim(-2) != k) fail();
  const std::size_t m = bv.dim(-1);
  Shape out_shape = av.shape();
  out_shape.back() = m;
  DenseArray<T> out(out_shape);
  const bool shared = bv.rank() == 2;
  std::size_t batch = 1;
  if (shared) {
    kernels::gemm(av.data(), bv.data(), out.data(), av.numel() / k, k, m, false, false, false);
  } else {
    if (av.rank() != bv.rank() ||
        !std::equal(av.shape().begin(), av.shape().end() - 2, bv.shape().begin())) {
      fail();
    }
    batch = av.numel() / (n * k);
    for (std::size_t i = 0; i < batch; ++i) {
      kernels::gemm(av.data() + i * n * k, bv.data() + i * k * m, out.data() + i * n * m, n, k, m,
                    false, false, false);
    }
  }
  return a.tape().record(
      "matmul", std::move(out), {a, b},
      [shared, batch, n, k, m](Tape<T>& tape, const typename Tape<T>::Node& node,
                               const DenseArray<T>& g) {
        const auto& av = tape.slot_value(node.inputs[0]);
        const auto& bv = tape.slot_value(node.inputs[1]);
        const bool need_a = tape.slot_requires_grad(node.inputs[0]);
        const bool need_b = tape.slot_requires_grad(node.inputs[1]);
        if (shared) {
          const std::size_t rows = av.numel() / k;
          if (need_a) {
            DenseArray<T> ga(av.shape());
            kernels::gemm(g.data(), bv.data(), ga.data(), rows, m, k, false, true, false);
            tape.accumulate(node.inputs[0], std::move(ga));
          }
          if (need_b) {
            DenseArray<T> gb(bv.shape());
            kernels::gemm(av.data(), g.data(), gb.data(), k, rows, m, true, false, false);
            tape.accumulate(node.inputs[1], std::move(gb));
          }
          return;
        }
        if (need_a) {
          DenseArray<T> ga(av.shape());
          for (std::size_t i = 0; i < batch; ++i)
            kernels::gemm(g.data() + i * n * m, bv.data() + i * k * m, ga.data() + i * n * k, n, m,
                          k, false, true, false);
          tape.accumulate(node.inputs[0], std::move(ga));
        }
        if (need_b) {
          DenseArray<T> gb(bv.shape());
          for (std::size_t i = 0; i < batch; ++i)
            kernels::gemm(av.data() + i * n * k, g.data() + i * n * m, gb.data() + i * k * m, k, n,
                          m, true, false, false);
          tape.accumulate(node.inputs[1], std::move(gb));
        }
      });
}

// ---- reductions and normalisers --------------------------------------------------

template <typename T>
Var<T> softmax_last(Var<T> a) {
  const auto& av = a.value();
  if (av.rank() == 0 || av.empty()) throw ShapeError("softmax_last: empty input");
  DenseArray<T> out = av;
  const std::size_t w = av.shape().back();
  kernels::softmax_rows(out.data(), av.numel() / w, w);
  return a.tape().record(
      "softmax_last", std::move(out), {a},
      [w](Tape<T>& tape, const typename Tape<T>::Node& node, const DenseArray<T>& g) {
        const auto& y = tape.slot_value(node.output);
        DenseArray<T> gx(y.shape());
        const std::size_t rows = y.numel() / w;
        for (std::size_t r = 0; r < rows; ++r) {
          const T* yr = y.data() + r * w;
          const T* gr = g.data() + r * w;
          T dot = 0;
          for (std::size_t j = 0; j < w; ++j) dot += yr[j] * gr[j];
          T* out = gx.data() + r * w;
          for (std::size_t j = 0; j < w; ++j) out[j] = yr[j] * (gr[j] - dot);
        }
        tape.accumulate(node.inputs[0], std::move(gx));
      });
}

/// Sum of all elements, shape [1].
template <typename T>
Var<T> sum(Var<T> a) {
  T s = 0;
  for (T v : a.value().values()) s += v;
  return a.tape().record("sum", DenseArray<T>::scalar(s), {a},
                         [](Tape<T>& tape, const typename Tape<T>::Node& node, const DenseArray<T>& g) {
                           tape.accumulate(node.inputs[0],
                                           DenseArray<T>(tape.slot_value(node.inputs[0]).shape(), g[0]));
                         });
}

template <typename T>
Var<T> mean(Var<T> a) {
  const T n = static_cast<T>(a.value().numel());
  return mul_scalar(sum(a), T(1) / n);
}

/// Sum along one axis; keepdim leaves a unit extent in place.
template <typename T>
Var<T> sum_axis(Var<T> a, int axis, bool keepdim = true) {
  const auto& av = a.value();
  const auto sp = detail::split_axis("sum_axis", av.shape(), axis);
  Shape s = av.shape();
  if (keepdim) {
    s[sp.axis] = 1;
  } else {
    s.erase(s.begin() + static_cast<std::ptrdiff_t>(sp.axis));
    if (s.empty()) s.push_back(1);
  }
  DenseArray<T> out(s);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t l = 0; l < sp.len; ++l)
      for (std::size_t i = 0; i < sp.inner; ++i)
        out[o * sp.inner + i] += av[(o * sp.len + l) * sp.inner + i];
  return a.tape().record(
      "sum_axis", std::move(out), {a},
      [sp](Tape<T>& tape, const typename Tape<T>::Node& node, const DenseArray<T>& g) {
        DenseArray<T> gx(tape.slot_value(node.inputs[0]).shape());
        for (std::size_t o = 0; o < sp.outer; ++o)
          for (std::size_t l = 0; l < sp.len; ++l)
            for (std::size_t i = 0; i < sp.inner; ++i)
              gx[(o * sp.len + l) * sp.inner + i] = g[o * sp.inner + i];
        tape.accumulate(node.inputs[0], std::move(gx));
      });
}

/// Squared Frobenius norm, shape [1].
template <typename T>
Var<T> sq_norm(Var<T> a) {
  T s = 0;
  for (T v : a.value().values()) s += v * v;
  return a.tape().record("sq_norm", DenseArray<T>::scalar(s), {a},
                         [](Tape<T>& tape, const typename Tape<T>::Node& node, const DenseArray<T>& g) {
                           const auto& x = tape.slot_value(node.inputs[0]);
                           tape.accumulate(node.inputs[0],
                                           detail::map(x, [c = T(2) * g[0]](T v) { return c * v; }));
                         });
}

/// Root-mean-square normalisation over the last axis with a learned gain.
template <typename T>
Var<T> rms_norm(Var<T> x, Var<T> gain, T eps = T(1e-6)) {
  detail::check_same_tape("rms_norm", x, gain);
  const auto& xv = x.value();
  const auto& gv = gain.value();
  const std::size_t w = xv.shape().back();
  if (gv.shape() != Shape{w}) {
    throw ShapeError("rms_norm: gain " + shape_str(gv.shape()) + " for input " +
                     shape_str(xv.shape()));
  }
  const std::size_t rows = xv.numel() / w;
  DenseArray<T> out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.data() + r * w;
    T ms = 0;
    for (std::size_t j = 0; j < w; ++j) ms += xr[j] * xr[j];
    const T inv = T(1) / std::sqrt(ms / static_cast<T>(w) + eps);
    for (std::size_t j = 0; j < w; ++j) out[r * w + j] = xr[j] * inv * gv[j];
  }
  return x.tape().record(
      "rms_norm", std::move(out), {x, gain},
      [w, rows, eps](Tape<T>& tape, const typename Tape<T>::Node& node, const DenseArray<T>& g) {
        const auto& xv = tape.slot_value(node.inputs[0]);
        const auto& gv = tape.slot_value(node.inputs[1]);
        DenseArray<T> gx(xv.shape());
        DenseArray<T> gg(gv.shape());
        for (std::size_t r = 0; r < rows; ++r) {
          const T* xr = xv.data() + r * w;
          const T* gr = g.data() + r * w;
          T ms = 0;
          for (std::size_t j = 0; j < w; ++j) ms += xr[j] * xr[j];
          const T inv = T(1) / std::sqrt(ms / static_cast<T>(w) + eps);
          T dot = 0;
          for (std::size_t j = 0; j < w; ++j) {
            const T xh = xr[j] * inv;
            gg[j] += gr[j] * xh;
            dot += gr[j] * gv[j] * xh;
          }
          dot /= static_cast<T>(w);
          for (std::size_t j = 0; j < w; ++j) {
            gx[r * w + j] = (gr[j] * gv[j] - xr[j] * inv * dot) * inv;
          }
        }
        tape.accumulate(node.inputs[0], std::move(gx));
        tape.accumulate(node.inputs[1], std::move(gg));
      });
}

// ---- custom gradients ------------------------------------------------------------

/// Applies `forward_fn` in the forward pass and `backward_fn(grad_out, x, y)`
/// in place of its true Jacobian. The produced gradient must match x's shape.
template <typename T, typename Fwd, typename Bwd>
Var<T> custom_grad(Var<T> x, Fwd forward_fn, Bwd backward_fn, std::string name = "custom_grad") {
  DenseArray<T> out = forward_fn(x.value());
  return x.tape().record(
      std::move(name), std::move(out), {x},
      [backward_fn](Tape<T>& tape, const typename Tape<T>::Node& node, const DenseArray<T>& g) {
        const auto& xv = tape.slot_value(node.inputs[0]);
        DenseArray<T> gx = backward_fn(g, xv, tape.slot_value(node.output));
        if (gx.shape() != xv.shape()) {
          throw ShapeError(node.name + ": backward produced " + shape_str(gx.shape()) +
                           " for input " + shape_str(xv.shape()));
        }
        tape.accumulate(node.inputs[0], std::move(gx));
      });
}

/// Identity forward, zero gradient.
template <typename T>
Var<T> detach(Var<T> x) {
  return custom_grad<T>(
      x, [](const DenseArray<T>& v) { return v; },
      [](const DenseArray<T>& g, const DenseArray<T>&, const DenseArray<T>&) {
        return DenseArray<T>(g.shape());
      },
      "detach");
}

/// Round half up in the forward pass, straight-through (identity) gradient.
template <typename T>
Var<T> ste_round(Var<T> x) {
  return custom_grad<T>(
      x, [](const DenseArray<T>& v) { return detail::map(v, [](T e) { return std::floor(e + T(0.5)); }); },
      [](const DenseArray<T>& g, const DenseArray<T>&, const DenseArray<T>&) { return g; },
      "ste_round");
}

}  // namespace linflow

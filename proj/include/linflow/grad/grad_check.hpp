#pragma once

#include <algorithm>
#include <cmath>
#include <utility>

#include "linflow/core/dense_array.hpp"
#include "linflow/grad/tape.hpp"

namespace linflow {

struct GradCheckOptions {
  /// Coordinates whose gradient is smaller than this fraction of the largest
  /// gradient entry are compared against that floor instead of their own
  /// magnitude. Keeps 32-bit round-off on near-zero entries from dominating.
  /// Negative selects the default: 5e-2 for 32-bit scalars, 1e-3 for 64-bit
  /// and for grad_check_widened.
  double relative_floor = -1.0;
  /// Fourth-order central stencil (f(x±2h), f(x±h)); lets 32-bit checks use
  /// a step large enough to keep round-off small. Off: plain (f(x+h)−f(x−h))/2h.
  bool fourth_order = true;
};

namespace detail {

template <typename T, typename Fn>
DenseArray<T> tape_gradient(Fn& fn, const DenseArray<T>& point) {
  Tape<T> tape;
  auto x = tape.leaf(point, true);
  auto y = fn(x);
  if (y.value().numel() != 1) throw ShapeError("grad_check: fn must be scalar-valued");
  if (!y.value().all_finite()) throw NonFiniteError("grad_check: non-finite fn value");
  tape.backward(y);
  return tape.has_grad(x) ? tape.grad(x) : DenseArray<T>(point.shape());
}

/// Central differences of fn at `point`, evaluated in precision S.
template <typename S, typename Fn>
DenseArray<double> numeric_gradient(Fn& fn, const DenseArray<S>& point, S eps, bool fourth_order) {
  auto eval = [&](const DenseArray<S>& p) {
    Tape<S> tape;
    auto y = fn(tape.constant(p));
    const S v = y.value()[0];
    if (!std::isfinite(v)) throw NonFiniteError("grad_check: non-finite fn value");
    return static_cast<double>(v);
  };
  DenseArray<double> numeric(point.shape());
  DenseArray<S> probe = point;
  auto at = [&](std::size_t i, S offset) {
    const S orig = probe[i];
    probe[i] = orig + offset;
    const double f = eval(probe);
    const double x = static_cast<double>(probe[i]);
    probe[i] = orig;
    return std::pair<double, double>{x, f};
  };
  for (std::size_t i = 0; i < point.numel(); ++i) {
    const auto [xp, fp] = at(i, eps);
    const auto [xm, fm] = at(i, -eps);
    if (!fourth_order) {
      numeric[i] = (fp - fm) / (xp - xm);
      continue;
    }
    const auto [xp2, fp2] = at(i, S(2) * eps);
    const auto [xm2, fm2] = at(i, S(-2) * eps);
    const double h = (xp2 - xm2) / 4.0;
    numeric[i] = (-fp2 + 8.0 * fp - 8.0 * fm + fm2) / (12.0 * h);
  }
  return numeric;
}

template <typename T>
double max_relative_error(const DenseArray<T>& analytic, const DenseArray<double>& numeric,
                          double rel_floor) {
  double scale = 0;
  for (std::size_t i = 0; i < numeric.numel(); ++i) {
    scale = std::max({scale, std::abs(numeric[i]), std::abs(static_cast<double>(analytic[i]))});
  }
  const double floor = std::max(scale * rel_floor, 1e-30);
  double worst = 0;
  for (std::size_t i = 0; i < numeric.numel(); ++i) {
    const double a = analytic[i];
    const double b = numeric[i];
    const double denom = std::max({std::abs(a), std::abs(b), floor});
    worst = std::max(worst, std::abs(a - b) / denom);
  }
  return worst;
}

template <typename T>
double default_floor(const GradCheckOptions& opts) {
  return opts.relative_floor >= 0 ? opts.relative_floor : (sizeof(T) < sizeof(double) ? 5e-2 : 1e-3);
}

}  // namespace detail

/// Compares the tape gradient of the scalar `fn(x)` at `point` against central
/// finite differences with step `eps`; returns the max relative error.
/// `fn` is called as fn(Var<T>) -> Var<T> on a fresh tape per evaluation.
template <typename T, typename Fn>
double grad_check(Fn&& fn, const DenseArray<T>& point, T eps, GradCheckOptions opts = {}) {
  if (!(eps > T(0))) throw std::invalid_argument("grad_check: eps must be positive");
  const DenseArray<T> analytic = detail::tape_gradient<T>(fn, point);
  const DenseArray<double> numeric = detail::numeric_gradient<T>(fn, point, eps, opts.fourth_order);
  return detail::max_relative_error(analytic, numeric, detail::default_floor<T>(opts));
}
/// As grad_check, but the finite-difference reference is evaluated in 64-bit
/// precision. `fn` must accept both Var<T> and Var<double>. Use this to test a
/// 32-bit gradient where 32-bit differences would be dominated by round-off.
template <typename T, typename Fn>
double grad_check_widened(Fn&& fn, const DenseArray<T>& point, double eps, GradCheckOptions opts = {}) {
  if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");
  const DenseArray<T> analytic = detail::tape_gradient<T>(fn, point);
  const DenseArray<double> numeric =
      detail::numeric_gradient<double>(fn, point.template cast<double>(), eps, opts.fourth_order);
  return detail::max_relative_error(analytic, numeric,
                                    opts.relative_floor >= 0 ? opts.relative_floor : 1e-3);
}

}  // namespace linflow

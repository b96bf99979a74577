#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <type_traits>
#include <string>
#include <vector>

#include "linflow/core/dense_array.hpp"
#include "linflow/flow/schedule.hpp"
#include "linflow/grad/ops.hpp"

namespace linflow::flow {

/// A velocity network evaluated without gradients: u(x, t) for a batch
/// x = [B, ...] with one time per sample.
template <typename F, typename T>
concept VelocityField = requires(const F& f, const DenseArray<T>& x, std::span<const T> t) {
  { f(x, t) } -> std::convertible_to<DenseArray<T>>;
};

namespace detail {

inline void check_time(const char* op, double t) {
  if (!(t >= 0.0 && t <= 1.0)) {
    throw std::out_of_range(std::string(op) + ": t=" + std::to_string(t) + " outside [0,1]");
  }
}

template <typename T>
void check_same_shape(const char* op, const DenseArray<T>& a, const DenseArray<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <typename T>
std::size_t per_sample(const DenseArray<T>& x, std::size_t batch) {
  if (x.rank() < 1 || x.dim(0) != batch) {
    throw ShapeError("expected leading batch extent " + std::to_string(batch) + ", got " +
                     shape_str(x.shape()));
  }
  return batch ? x.numel() / batch : 0;
}

template <typename T, typename F>
DenseArray<T> eval_field(const F& model, const DenseArray<T>& x, std::span<const T> t) {
  DenseArray<T> u = model(x, t);
  if (u.shape() != x.shape()) {
    throw ShapeError("velocity field returned " + shape_str(u.shape()) + " for input " +
                     shape_str(x.shape()));
  }
  return u;
}

}  // namespace detail

/// x_t = (1 − t)·x0 + t·ε.
template <typename T>
DenseArray<T> add_noise(const DenseArray<T>& x0, const DenseArray<T>& eps, T t) {
  detail::check_time("add_noise", t);
  detail::check_same_shape("add_noise", x0, eps);
  DenseArray<T> out(x0.shape());
  const T a = T(1) - t;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a * x0[i] + t * eps[i];
  return out;
}

/// Batched form with one t per leading-axis sample.
template <typename T>
DenseArray<T> add_noise(const DenseArray<T>& x0, const DenseArray<T>& eps, std::span<const T> t) {
  detail::check_same_shape("add_noise", x0, eps);
  const std::size_t m = detail::per_sample(x0, t.size());
  DenseArray<T> out(x0.shape());
  for (std::size_t b = 0; b < t.size(); ++b) {
    detail::check_time("add_noise", t[b]);
    const T a = T(1) - t[b];
    for (std::size_t i = b * m; i < (b + 1) * m; ++i) out[i] = a * x0[i] + t[b] * eps[i];
  }
  return out;
}

/// Conditional velocity dα/dt·x0 + dσ/dt·ε = ε − x0.
template <typename T>
DenseArray<T> velocity_target(const DenseArray<T>& x0, const DenseArray<T>& eps) {
  detail::check_same_shape("velocity_target", x0, eps);
  DenseArray<T> out(x0.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = eps[i] - x0[i];
  return out;
}

/// One flow-matching minibatch: data, noise, times and the derived x_t.
template <typename T>
struct FmBatch {
  DenseArray<T> x0, eps, xt;
  std::vector<T> t;
};

/// Draws ε ~ N(0, I) and t from `t_sampler(rng)` for every sample of x0.
template <typename T, typename Rng, typename TSampler>
FmBatch<T> make_fm_batch(DenseArray<T> x0, Rng& rng, TSampler&& t_sampler) {
  FmBatch<T> b;
  const std::size_t batch = x0.dim(0);
  b.eps = DenseArray<T>::randn(x0.shape(), rng);
  b.t.resize(batch);
  for (auto& t : b.t) t = static_cast<T>(t_sampler(rng));
  b.xt = add_noise<T>(x0, b.eps, std::span<const T>(b.t));
  b.x0 = std::move(x0);
  return b;
}

/// Per-sample squared Frobenius norm of a [B, ...] variable, shape [B].
template <typename T>
Var<T> per_sample_sq_norm(Var<T> x) {
  const std::size_t batch = x.value().dim(0);
  Var<T> flat = reshape(x, {batch, x.value().numel() / batch});
  return sum_axis(flat * flat, 1, false);
}

/// mean_b w(t_b)·‖(ε_b − x0_b) − u(x_t,b, t_b)‖²_F. `model(tape, x, t)` returns
/// the velocity as a Var; `weight_fn(t)` defaults to 1.
template <typename T, typename ModelFn>
Var<T> fm_loss(Tape<T>& tape, ModelFn&& model, const FmBatch<T>& batch,
               const std::type_identity_t<std::function<T(T)>>& weight_fn = {}) {
  const std::size_t n = batch.t.size();
  Var<T> u = model(tape, tape.constant(batch.xt), std::span<const T>(batch.t));
  Var<T> target = tape.constant(velocity_target(batch.x0, batch.eps));
  Var<T> per = per_sample_sq_norm(target - u);
  if (weight_fn) {
    DenseArray<T> w({n});
    for (std::size_t b = 0; b < n; ++b) w[b] = weight_fn(batch.t[b]);
    per = per * tape.constant(std::move(w));
  }
  return mul_scalar(sum(per), T(1) / static_cast<T>(n));
}

/// x̂_t = (t − t')·u(x_{t'}, t') + x_{t'} for 0 <= t < t' <= 1.
template <typename T, typename F>
  requires VelocityField<F, T>
DenseArray<T> euler_step(const F& model, const DenseArray<T>& x_tprime, T t_prime, T t) {
  if (!(t >= T(0) && t < t_prime && t_prime <= T(1))) {
    throw std::invalid_argument("euler_step: need 0 <= t < t' <= 1, got t=" + std::to_string(t) +
                                " t'=" + std::to_string(t_prime));
  }
  const std::vector<T> tv(x_tprime.dim(0), t_prime);
  const DenseArray<T> u = detail::eval_field(model, x_tprime, std::span<const T>(tv));
  const T h = t - t_prime;
  DenseArray<T> out(x_tprime.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = h * u[i] + x_tprime[i];
  return out;
}

template <typename T>
struct SampleResult {
  DenseArray<T> x0_hat;
  /// States at every grid node, x1 first; empty unless requested.
  std::vector<DenseArray<T>> trajectory;
};

/// Euler integration of the probability-flow ODE over the schedule grid.
template <typename T, typename F>
  requires VelocityField<F, T>
SampleResult<T> sample(const F& model, const FlowSchedule& schedule, DenseArray<T> x1,
                       bool keep_trajectory = false) {
  if (schedule.t_grid.empty()) throw std::invalid_argument("sample: empty time grid");
  schedule.validate();
  SampleResult<T> r;
  if (keep_trajectory) r.trajectory.push_back(x1);
  DenseArray<T> x = std::move(x1);
  for (std::size_t i = 0; i + 1 < schedule.t_grid.size(); ++i) {
    x = euler_step(model, x, static_cast<T>(schedule.t_grid[i]), static_cast<T>(schedule.t_grid[i + 1]));
    if (keep_trajectory) r.trajectory.push_back(x);
  }
  r.x0_hat = std::move(x);
  return r;
}

struct ScoreDiagnostics {
  bool clamped = false;
  double t_used = 0.0;
};

namespace detail {
template <typename T>
T clamp_time(T t, double t_min, ScoreDiagnostics* diag) {
  T used = t;
  if (t < static_cast<T>(t_min)) used = static_cast<T>(t_min);
  if (diag) {
    diag->clamped = used != t;
    diag->t_used = static_cast<double>(used);
  }
  return used;
}
}  // namespace detail

/// Score of p_t implied by a rectified-flow velocity:
/// s_t(x) = −(1/t)·((1 − t)·u(x, t) + x). Times below `t_min` are raised to
/// it and the clamp is reported through `diag`.
template <typename T, typename F>
  requires VelocityField<F, T>
DenseArray<T> score_from_velocity(const F& model, const DenseArray<T>& x, T t, double t_min = 0.02,
                                  ScoreDiagnostics* diag = nullptr) {
  detail::check_time("score_from_velocity", t);
  const T tc = detail::clamp_time(t, t_min, diag);
  const std::vector<T> tv(x.dim(0), tc);
  const DenseArray<T> u = detail::eval_field(model, x, std::span<const T>(tv));
  DenseArray<T> s(x.shape());
  const T a = T(1) - tc;
  for (std::size_t i = 0; i < s.numel(); ++i) s[i] = -(a * u[i] + x[i]) / tc;
  return s;
}

/// Closed form of score_teacher − score_student at a shared x:
/// −((1 − t)/t)·(u_teacher − u_student). The x terms cancel.
template <typename T>
DenseArray<T> score_difference_from_velocities(const DenseArray<T>& u_teacher,
                                               const DenseArray<T>& u_student, T t) {
  detail::check_same_shape("score_difference", u_teacher, u_student);
  const T c = -(T(1) - t) / t;
  DenseArray<T> out(u_teacher.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = c * (u_teacher[i] - u_student[i]);
  return out;
}

template <typename T, typename FT, typename FS>
  requires VelocityField<FT, T> && VelocityField<FS, T>
DenseArray<T> score_difference(const FT& teacher, const FS& student, const DenseArray<T>& x, T t,
                               double t_min = 0.02, ScoreDiagnostics* diag = nullptr) {
  detail::check_time("score_difference", t);
  const T tc = detail::clamp_time(t, t_min, diag);
  const std::vector<T> tv(x.dim(0), tc);
  const std::span<const T> ts(tv);
  return score_difference_from_velocities(detail::eval_field(teacher, x, ts),
                                          detail::eval_field(student, x, ts), tc);
}

}  // namespace linflow::flow

#pragma once

// Transfer objectives. `target` always counts layers that end up LINEAR
// (round(r) = 0); r = 1 keeps softmax attention.

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "linflow/core/dense_array.hpp"
#include "linflow/data/trajectory_store.hpp"
#include "linflow/flow/flow.hpp"
#include "linflow/grad/ops.hpp"
#include "linflow/model/toy_transformer.hpp"

namespace linflow::train {

/// (Σ_l (1 − round(clip(r_l))) − target)² with a straight-through round.
template <typename T>
Var<T> constraint_loss(std::span<const Var<T>> scores, std::size_t target) {
  if (scores.empty()) throw std::invalid_argument("constraint_loss: no scores");
  Var<T> count;
  for (const auto& r : scores) {
    Var<T> linear = T(1) - ste_round(clip(r, T(0), T(1)));
    count = count.valid() ? count + linear : linear;
  }
  Var<T> gap = count - static_cast<T>(target);
  return sum(gap * gap);
}

/// Σ_l (1 − |2·clip(r_l) − 1|^α); zero exactly when every r is 0 or 1.
template <typename T>
Var<T> regularization_loss(std::span<const Var<T>> scores, T alpha) {
  if (!(alpha > T(0))) throw std::invalid_argument("regularization_loss: alpha must be positive");
  if (scores.empty()) throw std::invalid_argument("regularization_loss: no scores");
  Var<T> total;
  for (const auto& r : scores) {
    Var<T> term = T(1) - pow(abs(T(2) * clip(r, T(0), T(1)) - T(1)), alpha);
    total = total.valid() ? total + term : term;
  }
  return sum(total);
}

/// Linear anneal from `start` at step 0 to `end` at `total_steps`.
inline double alpha_at(std::size_t step, std::size_t total_steps, double start, double end) {
  if (step > total_steps) throw std::out_of_range("alpha_at: step beyond schedule");
  if (total_steps == 0) return end;
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  return start + (end - start) * frac;
}

/// [B, ...] array holding c_b in every entry of sample b.
template <typename T>
DenseArray<T> per_sample_constant(const Shape& shape, std::span<const T> c) {
  DenseArray<T> out(shape);
  const std::size_t m = out.numel() / c.size();
  for (std::size_t b = 0; b < c.size(); ++b) std::fill_n(out.data() + b * m, m, c[b]);
  return out;
}

/// mean_b ‖u_b − û(x_b, t_b)‖²_F over stored teacher pairs: per-sample sum of
/// squares over all seq_len·d_state entries, averaged over the batch.
template <typename T>
Var<T> mse_loss(const model::ToyTransformer<T>& student,
                const typename model::ToyTransformer<T>::Bound& bound, Tape<T>& tape,
                const DenseArray<T>& x, const DenseArray<T>& u, std::span<const T> t) {
  if (t.empty()) throw std::invalid_argument("mse_loss: empty batch");
  Var<T> pred = student.forward(bound, tape.constant(x), t);
  Var<T> per = flow::per_sample_sq_norm(tape.constant(u) - pred);
  return mul_scalar(sum(per), T(1) / static_cast<T>(t.size()));
}

/// Diagnostics of one ADM evaluation.
template <typename T>
struct AdmParts {
  Var<T> surrogate;
  DenseArray<T> delta;  ///< score difference teacher − student at x̂_t
  DenseArray<T> x_hat;  ///< one-step student prediction x̂_t
};

/// Surrogate whose parameter gradient is the distribution-matching gradient
/// E[(s_student − s_teacher)(x̂_t) · ∂x̂_t/∂θ]:
///   x̂_t = x_{t'} + (t − t')·û(x_{t'}, t')       (differentiable in θ)
///   Δ   = −((1 − t)/t)·(u_teacher − û)(x̂_t)     (both evaluations detached)
///   L   = ⟨−Δ, x̂_t⟩ / numel(x̂_t)
/// The inner product is averaged over every entry of the batch, so the
/// objective's scale does not grow with the sample size.
/// `student_fwd(tape, x, t)` is the differentiable student, `student_eval`
/// and `teacher` map (array, times) to velocities without a tape.
template <typename T, typename StudentFwd, typename StudentEval, typename Teacher>
AdmParts<T> adm_loss(Tape<T>& tape, StudentFwd&& student_fwd, StudentEval&& student_eval, const Teacher& teacher,
                     const DenseArray<T>& x_prev, std::span<const T> t_prev, std::span<const T> t_next,
                     double t_min_clamp) {
  const std::size_t batch = t_prev.size();
  if (batch == 0 || t_next.size() != batch) throw std::invalid_argument("adm_loss: bad batch");
  std::vector<T> step(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    if (!(t_next[b] >= static_cast<T>(t_min_clamp))) {
      throw std::out_of_range("adm_loss: t=" + std::to_string(t_next[b]) + " below clamp " +
                              std::to_string(t_min_clamp));
    }
    if (!(t_next[b] < t_prev[b])) throw std::invalid_argument("adm_loss: need t < t'");
    step[b] = t_next[b] - t_prev[b];
  }
  Var<T> u_prev = student_fwd(tape, tape.constant(x_prev), t_prev);
  Var<T> h = tape.constant(per_sample_constant<T>(x_prev.shape(), std::span<const T>(step)));
  Var<T> x_hat = u_prev * h + tape.constant(x_prev);

  const DenseArray<T>& xh = x_hat.value();
  const DenseArray<T> u_teacher = teacher(xh, t_next);
  const DenseArray<T> u_student = student_eval(xh, t_next);
  DenseArray<T> delta(xh.shape());
  const std::size_t m = xh.numel() / batch;
  for (std::size_t b = 0; b < batch; ++b) {
    const T c = -(T(1) - t_next[b]) / t_next[b];
    for (std::size_t i = b * m; i < (b + 1) * m; ++i) delta[i] = c * (u_teacher[i] - u_student[i]);
  }
  if (!delta.all_finite()) throw NonFiniteError("adm_loss: non-finite score difference");
  DenseArray<T> neg_delta = delta;
  for (auto& v : neg_delta.values()) v = -v;
  Var<T> inner = sum(tape.constant(std::move(neg_delta)) * x_hat);
  return {mul_scalar(inner, T(1) / static_cast<T>(xh.numel())), std::move(delta), xh};
}

/// adm_loss for a ToyTransformer student bound to `tape`.
template <typename T, typename Teacher>
AdmParts<T> adm_loss(const model::ToyTransformer<T>& student,
                     const typename model::ToyTransformer<T>::Bound& bound, Tape<T>& tape,
                     const Teacher& teacher, const DenseArray<T>& x_prev, std::span<const T> t_prev,
                     std::span<const T> t_next, double t_min_clamp) {
  auto fwd = [&](Tape<T>&, Var<T> x, std::span<const T> t) { return student.forward(bound, x, t); };
  return adm_loss(tape, fwd, student, teacher, x_prev, t_prev, t_next, t_min_clamp);
}

}  // namespace linflow::train

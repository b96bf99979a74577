#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "linflow/core/dense_array.hpp"
#include "linflow/grad/tape.hpp"
#include "linflow/model/toy_transformer.hpp"

namespace linflow::train {

/// Linear warmup over the first `warmup_fraction` of steps, then cosine decay
/// to zero at `total_steps`.
inline double lr_at(std::size_t step, std::size_t total_steps, double base_lr, double warmup_fraction) {
  if (total_steps == 0) return base_lr;
  const auto warmup = static_cast<std::size_t>(std::ceil(warmup_fraction * static_cast<double>(total_steps)));
  if (step < warmup) return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
  const std::size_t span = total_steps - warmup;
  if (span == 0) return base_lr;
  const double progress = std::min(1.0, static_cast<double>(step - warmup) / static_cast<double>(span));
  return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * progress));
}

/// The same warmup followed by a constant rate.
inline double warmup_at(std::size_t step, std::size_t total_steps, double base_lr, double warmup_fraction) {
  const auto warmup = static_cast<std::size_t>(std::ceil(warmup_fraction * static_cast<double>(total_steps)));
  if (step < warmup) return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
  return base_lr;
}

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

/// Adam with decoupled weight decay. Parameters flagged `decay = false` skip
/// the decay; `unit_interval` parameters are projected back into [0, 1].
template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWOptions opts = {}) : opts_(opts) {}

  const AdamWOptions& options() const noexcept { return opts_; }
  std::size_t steps_taken() const noexcept { return t_; }

  /// Applies one update from the gradients recorded on `tape` for the handles
  /// in `bound`. Parameters without a gradient are left untouched.
  /// `unit_interval_lr` (defaults to `lr`) is used for unit-interval parameters.
  void step(model::ToyTransformer<T>& model, const typename model::ToyTransformer<T>::Bound& bound,
            const Tape<T>& tape, double lr, std::optional<double> unit_interval_lr = {}) {
    step_with(model, bound, tape, [&](const model::Parameter<T>& p) {
      return p.unit_interval ? unit_interval_lr.value_or(lr) : lr;
    });
  }

  /// As step, with `rate(parameter)` giving each parameter's learning rate;
  /// the decoupled decay scales with the same rate.
  template <typename RateFn>
  void step_with(model::ToyTransformer<T>& model, const typename model::ToyTransformer<T>::Bound& bound,
                 const Tape<T>& tape, RateFn&& rate_of) {
    auto& params = model.parameters();
    if (bound.vars.size() != params.size()) throw std::logic_error("AdamW: bound does not match model");
    if (first_.size() != params.size()) {
      first_.assign(params.size(), {});
      second_.assign(params.size(), {});
    }
    ++t_;
    const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      if (!p.trainable || !tape.has_grad(bound.vars[i])) continue;
      const DenseArray<T>& g = tape.grad(bound.vars[i]);
      if (first_[i].numel() != g.numel()) {
        first_[i] = DenseArray<double>(g.shape());
        second_[i] = DenseArray<double>(g.shape());
      }
      const double rate = rate_of(std::as_const(p));
      const double decay = p.decay ? rate * opts_.weight_decay : 0.0;
      auto& m = first_[i];
      auto& v = second_[i];
      for (std::size_t k = 0; k < g.numel(); ++k) {
        const double gk = g[k];
        m[k] = opts_.beta1 * m[k] + (1.0 - opts_.beta1) * gk;
        v[k] = opts_.beta2 * v[k] + (1.0 - opts_.beta2) * gk * gk;
        double w = static_cast<double>(p.value[k]);
        w -= decay * w;
        w -= rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + opts_.eps);
        if (p.unit_interval) w = std::clamp(w, 0.0, 1.0);
        p.value[k] = static_cast<T>(w);
      }
    }
  }

 private:
  AdamWOptions opts_;
  std::size_t t_ = 0;
  std::vector<DenseArray<double>> first_;
  std::vector<DenseArray<double>> second_;
};

}  // namespace linflow::train

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "linflow/data/trajectory_store.hpp"
#include "linflow/eval/metrics.hpp"
#include "linflow/flow/flow.hpp"
#include "linflow/flow/schedule.hpp"
#include "linflow/model/toy_transformer.hpp"
#include "linflow/train/trainer.hpp"

namespace linflow::eval {

using Model = model::ToyTransformer<float>;

/// Fixed noise, teacher samples and metric settings shared by every
/// evaluation so that student/teacher comparisons are paired.
struct EvalContext {
  flow::FlowSchedule schedule;
  DenseArray<float> noise;            ///< [N, seq_len, d_state]
  DenseArray<float> teacher_samples;  ///< teacher's Euler samples from `noise`
  std::size_t n_projections = 128;
  std::uint64_t projection_seed = 0;

  static EvalContext make(const Model& teacher, const flow::FlowSchedule& schedule, std::size_t n_samples,
                          std::uint64_t seed, std::size_t n_projections = 128) {
    std::mt19937_64 rng(seed);
    EvalContext ctx;
    ctx.schedule = schedule;
    ctx.noise = DenseArray<float>::randn({n_samples, teacher.config().seq_len, teacher.config().d_state}, rng);
    ctx.teacher_samples = flow::sample(teacher, schedule, ctx.noise, false).x0_hat;
    ctx.n_projections = n_projections;
    ctx.projection_seed = seed + 1;
    return ctx;
  }

  DenseArray<float> samples(const Model& m) const { return flow::sample(m, schedule, noise, false).x0_hat; }
  double w2_to_teacher(const DenseArray<float>& s) const {
    return sliced_wasserstein2(s, teacher_samples, n_projections, projection_seed);
  }
};

/// RMS difference between the samples of a mixed model and of its finalized
/// counterpart, both integrated from the same noise.
inline double finalization_gap(const DenseArray<float>& mixed_samples, const DenseArray<float>& final_samples) {
  if (mixed_samples.shape() != final_samples.shape()) throw ShapeError("finalization_gap: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < mixed_samples.numel(); ++i) {
    const double d = static_cast<double>(mixed_samples[i]) - static_cast<double>(final_samples[i]);
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(mixed_samples.numel()));
}

struct ScoreSummary {
  std::size_t linear_count = 0;      ///< layers with round(r) = 0
  double max_rounding_error = 0.0;   ///< max_l |r − round(r)|
  std::size_t undecided = 0;         ///< layers with r in (0.25, 0.75)
};

inline ScoreSummary summarize_scores(const std::vector<float>& r) {
  ScoreSummary s;
  for (float v : r) {
    const double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
    const double rounded = std::floor(c + 0.5);
    if (rounded == 0.0) ++s.linear_count;
    s.max_rounding_error = std::max(s.max_rounding_error, std::abs(c - rounded));
    if (c > 0.25 && c < 0.75) ++s.undecided;
  }
  return s;
}

struct CellResult {
  std::string name;
  train::TransferConfig config;
  std::vector<float> final_scores;
  ScoreSummary scores;
  double w2_mixed = 0.0;
  double w2_final = 0.0;
  double gap = 0.0;
  double seconds = 0.0;
  Model student;
};

/// One transfer from a fresh student, then evaluation of the mixed and the
/// finalized student against the teacher. `init_seed` drives the Hedgehog
/// re-initialization; the config's own seed drives batch sampling.
inline CellResult run_cell(const std::string& name, const Model& teacher, const data::TrajectorySet& set,
                           const train::TransferConfig& cfg, const EvalContext& ctx, std::uint64_t init_seed,
                           std::ostream* report = nullptr) {
  CellResult out;
  out.name = name;
  out.config = cfg;
  std::mt19937_64 rng(init_seed);
  Model student = train::make_student(teacher, rng);
  const auto t0 = std::chrono::steady_clock::now();
  const auto result = train::train_transfer(student, teacher, set, cfg, report);
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.final_scores = result.final_scores;
  out.scores = summarize_scores(out.final_scores);
  const auto mixed = ctx.samples(student);
  Model finalized = student;
  finalized.finalize_layers();
  const auto fin = ctx.samples(finalized);
  out.w2_mixed = ctx.w2_to_teacher(mixed);
  out.w2_final = ctx.w2_to_teacher(fin);
  out.gap = finalization_gap(mixed, fin);
  out.student = std::move(student);
  return out;
}

struct HeuristicResult {
  std::vector<std::size_t> layers;   ///< converted layers, in conversion order
  std::vector<double> deviations;    ///< probe deviation after each conversion
};

/// Mean squared velocity deviation from the teacher over a probe batch.
inline double probe_deviation(const Model& m, const Model& teacher, const DenseArray<float>& probe_x,
                              std::span<const float> probe_t) {
  const auto a = m(probe_x, probe_t);
  const auto b = teacher(probe_x, probe_t);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.numel());
}

/// Greedy baseline: repeatedly convert the quadratic layer whose switch to a
/// freshly initialized linear branch changes the probe output least.
inline HeuristicResult heuristic_layer_search(const Model& teacher, std::size_t target, const DenseArray<float>& probe_x,
                                              std::span<const float> probe_t, std::uint64_t seed) {
  const std::size_t n_layers = teacher.config().n_layers;
  if (target > n_layers) throw std::invalid_argument("heuristic_layer_search: target exceeds layer count");
  std::mt19937_64 rng(seed);
  Model current = train::make_student(teacher, rng);
  std::vector<bool> converted(n_layers, false);
  HeuristicResult result;
  for (std::size_t step = 0; step < target; ++step) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_layer = n_layers;
    for (std::size_t l = 0; l < n_layers; ++l) {
      if (converted[l]) continue;
      Model candidate = current;
      candidate.set_score(l, 0.0f);
      const double dev = probe_deviation(candidate, teacher, probe_x, probe_t);
      if (dev < best) {
        best = dev;
        best_layer = l;
      }
    }
    converted[best_layer] = true;
    current.set_score(best_layer, 0.0f);
    result.layers.push_back(best_layer);
    result.deviations.push_back(best);
  }
  return result;
}

/// Probe batch for the layer search: teacher trajectories from fresh noise
/// integrated down to the grid point closest to t = 0.5.
inline std::pair<DenseArray<float>, std::vector<float>> mid_trajectory_probe(const Model& teacher,
                                                                             const flow::FlowSchedule& schedule,
                                                                             std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto x = DenseArray<float>::randn({count, teacher.config().seq_len, teacher.config().d_state}, rng);
  std::size_t stop = 0;
  for (std::size_t i = 0; i < schedule.t_grid.size(); ++i) {
    if (std::abs(schedule.t_grid[i] - 0.5) < std::abs(schedule.t_grid[stop] - 0.5)) stop = i;
  }
  for (std::size_t i = 0; i < stop; ++i) {
    x = flow::euler_step(teacher, x, static_cast<float>(schedule.t_grid[i]), static_cast<float>(schedule.t_grid[i + 1]));
  }
  return {x, std::vector<float>(count, static_cast<float>(schedule.t_grid[stop]))};
}

}  // namespace linflow::eval

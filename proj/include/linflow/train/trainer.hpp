#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "linflow/data/trajectory_store.hpp"
#include "linflow/model/toy_transformer.hpp"
#include "linflow/train/losses.hpp"
#include "linflow/train/optim.hpp"

namespace linflow::train {

enum class Objective { kAdm, kMse };

inline const char* objective_name(Objective o) { return o == Objective::kAdm ? "adm" : "mse"; }

struct TransferConfig {
  std::size_t target = 4;  ///< layers to linearize
  double lambda = 0.01;
  double alpha_start = 20.0;
  double alpha_end = 2.0;
  std::size_t total_steps = 4000;
  double lr = 1e-4;
  double warmup_fraction = 0.1;
  double weight_decay = 1e-4;
  double t_min_clamp = 0.02;
  std::size_t batch_size = 32;
  Objective objective = Objective::kAdm;
  bool use_regularization = true;
  double score_lr = 0.1;  ///< selection-score rate: warmup, then constant
  std::uint64_t seed = 0;

  void validate(std::size_t n_layers) const {
    if (target > n_layers) throw std::invalid_argument("transfer: target exceeds layer count");
    if (!(lambda >= 0.0)) throw std::invalid_argument("transfer: lambda must be non-negative");
    if (!(alpha_end > 0.0) || !(alpha_start >= alpha_end)) {
      throw std::invalid_argument("transfer: need alpha_start >= alpha_end > 0");
    }
    if (!(lr > 0.0) || !(score_lr > 0.0)) throw std::invalid_argument("transfer: learning rates must be positive");
    if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) {
      throw std::invalid_argument("transfer: warmup_fraction must lie in [0,1]");
    }
    if (!(t_min_clamp > 0.0 && t_min_clamp < 1.0)) throw std::invalid_argument("transfer: t_min_clamp must lie in (0,1)");
    if (batch_size == 0) throw std::invalid_argument("transfer: batch_size must be positive");
  }
};

/// Loss components of one step; `objective` holds L_ADM or L_MSE.
struct LossParts {
  double objective = 0.0;
  double constraint = 0.0;
  double regularization = 0.0;
  double total = 0.0;
};

struct StepLog {
  std::size_t step = 0;
  double lr = 0.0;
  double alpha = 0.0;
  LossParts loss;
  std::vector<float> scores;
};

inline nlohmann::json to_json(const StepLog& s, Objective objective) {
  return {{"step", s.step},
          {"lr", s.lr},
          {"alpha", s.alpha},
          {std::string("loss_") + objective_name(objective), s.loss.objective},
          {"loss_con", s.loss.constraint},
          {"loss_reg", s.loss.regularization},
          {"loss_total", s.loss.total},
          {"r", s.scores}};
}

struct DivergenceError : std::runtime_error {
  DivergenceError(const std::string& what, nlohmann::json state)
      : std::runtime_error(what), state(std::move(state)) {}
  nlohmann::json state;
};

/// Total objective L + λ(L_con + L_reg) on one batch. Scores come from the
/// student's own r handles in `bound`. Returns the tape scalar and its parts.
template <typename T, typename Teacher>
std::pair<Var<T>, LossParts> total_loss(const model::ToyTransformer<T>& student,
                                        const typename model::ToyTransformer<T>::Bound& bound, Tape<T>& tape,
                                        const Teacher& teacher, const data::RecordBatch& batch,
                                        const TransferConfig& cfg, double alpha) {
  std::vector<T> t(batch.t.begin(), batch.t.end());
  std::vector<T> t_next(batch.t_next.begin(), batch.t_next.end());
  Var<T> main;
  if (cfg.objective == Objective::kAdm) {
    main = adm_loss(student, bound, tape, teacher, batch.x.template cast<T>(), std::span<const T>(t),
                    std::span<const T>(t_next), cfg.t_min_clamp)
               .surrogate;
  } else {
    main = mse_loss(student, bound, tape, batch.x.template cast<T>(), batch.u.template cast<T>(),
                    std::span<const T>(t));
  }
  LossParts parts;
  parts.objective = static_cast<double>(main.value()[0]);
  Var<T> total = main;

  std::vector<Var<T>> scores;
  for (std::size_t i : student.score_indices()) scores.push_back(bound.vars[i]);
  if (!scores.empty()) {
    Var<T> con = constraint_loss(std::span<const Var<T>>(scores), cfg.target);
    parts.constraint = static_cast<double>(con.value()[0]);
    Var<T> penalty = con;
    if (cfg.use_regularization) {
      Var<T> reg = regularization_loss(std::span<const Var<T>>(scores), static_cast<T>(alpha));
      parts.regularization = static_cast<double>(reg.value()[0]);
      penalty = penalty + reg;
    }
    total = total + penalty * static_cast<T>(cfg.lambda);
  }
  parts.total = static_cast<double>(total.value()[0]);
  return {total, parts};
}

struct TransferResult {
  std::vector<StepLog> history;
  std::vector<float> final_scores;
};

/// Records usable as (x_{t'}, t' → t) pairs: ADM needs a successor at or
/// above the clamp; MSE uses every stored pair.
inline std::vector<std::size_t> eligible_records(const data::TrajectorySet& set, const TransferConfig& cfg) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < set.count(); ++i) {
    if (cfg.objective == Objective::kMse || set.next_t(i) >= cfg.t_min_clamp) idx.push_back(i);
  }
  if (idx.empty()) throw std::invalid_argument("transfer: no usable trajectory records");
  return idx;
}

/// Starting point of a transfer: the teacher's weights with fresh Hedgehog
/// maps and every selection score at 1.
template <typename Rng>
model::ToyTransformer<float> make_student(const model::ToyTransformer<float>& teacher, Rng& rng) {
  model::ToyTransformer<float> student = teacher;
  student.set_frozen(false);
  student.reinit_hedgehog(rng);
  for (std::size_t l = 0; l < student.config().n_layers; ++l) {
    if (student.layer_kinds()[l] == model::LayerKind::kMixed) student.set_score(l, 1.0f);
  }
  return student;
}

/// Runs `total_steps` updates of `student` against a frozen teacher on stored
/// trajectory pairs. One JSON record per step goes to `report` when given.
template <typename Teacher>
TransferResult train_transfer(model::ToyTransformer<float>& student, const Teacher& teacher,
                              const data::TrajectorySet& set, const TransferConfig& cfg,
                              std::ostream* report = nullptr) {
  cfg.validate(student.config().n_layers);
  if (set.seq_len != student.config().seq_len || set.d_state != student.config().d_state) {
    throw ShapeError("transfer: trajectory shape does not match the student");
  }
  AdamW<float> opt({.weight_decay = cfg.weight_decay});
  const std::vector<std::size_t> pool = eligible_records(set, cfg);
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);

  TransferResult result;
  result.history.reserve(cfg.total_steps);
  std::vector<std::size_t> idx(cfg.batch_size);
  for (std::size_t step = 0; step < cfg.total_steps; ++step) {
    for (auto& i : idx) i = pool[pick(rng)];
    const data::RecordBatch batch = data::gather(set, idx);
    const double alpha = alpha_at(step, cfg.total_steps, cfg.alpha_start, cfg.alpha_end);
    const double lr = lr_at(step, cfg.total_steps, cfg.lr, cfg.warmup_fraction);
    const double score_lr = warmup_at(step, cfg.total_steps, cfg.score_lr, cfg.warmup_fraction);

    Tape<float> tape;
    const auto bound = student.bind(tape, true);
    StepLog log{step, lr, alpha, {}, student.scores()};
    try {
      auto [total, parts] = total_loss(student, bound, tape, teacher, batch, cfg, alpha);
      log.loss = parts;
      if (!std::isfinite(parts.total)) throw NonFiniteError("non-finite total loss");
      tape.backward(total);
    } catch (const NonFiniteError& e) {
      nlohmann::json state = to_json(log, cfg.objective);
      throw DivergenceError("transfer diverged at step " + std::to_string(step) + ": " + e.what(), state);
    }
    opt.step(student, bound, tape, lr, score_lr);
    if (report) *report << to_json(log, cfg.objective).dump() << '\n';
    result.history.push_back(std::move(log));
  }
  result.final_scores = student.scores();
  return result;
}

}  // namespace linflow::train

#pragma once

// The CLI commands as library calls. Every command reads its inputs from and
// writes its outputs to one run directory, next to the resolved config it ran
// with. Reports that are compared across runs carry no wall-clock data;
// timings go to separate `*_timings.json` files.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "linflow/app/run_config.hpp"
#include "linflow/data/toy_data.hpp"
#include "linflow/data/trajectory_store.hpp"
#include "linflow/eval/ablation.hpp"
#include "linflow/eval/bench.hpp"
#include "linflow/flow/flow.hpp"
#include "linflow/model/checkpoint.hpp"
#include "linflow/train/flow_training.hpp"
#include "linflow/train/trainer.hpp"

namespace linflow::app {

using Model = model::ToyTransformer<float>;

struct MissingInputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// File layout of a run directory.
struct RunDir {
  std::filesystem::path root;

  std::filesystem::path teacher() const { return root / "teacher.ckpt"; }
  std::filesystem::path trajectories() const { return root / "trajectories.bin"; }
  std::filesystem::path student() const { return root / "student.ckpt"; }
  std::filesystem::path finalized() const { return root / "finalized.ckpt"; }
  std::filesystem::path file(const std::string& name) const { return root / name; }
};

namespace detail {

inline void require(const std::filesystem::path& p, const char* what) {
  if (!std::filesystem::exists(p)) {
    throw MissingInputError(std::string("missing ") + what + ": " + p.string());
  }
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  os << text;
  if (!os) throw IoError("cannot write " + p.string());
}

inline Model load_model(const std::filesystem::path& p, const char* what) {
  require(p, what);
  return model::load_checkpoint<float>(p);
}

inline void save_model(const std::filesystem::path& p, const Model& m) {
  try {
    model::save_checkpoint(p, m);
  } catch (const std::runtime_error& e) {
    throw IoError(e.what());
  }
}

inline data::TrajectorySet load_set(const RunDir& dir) {
  require(dir.trajectories(), "trajectory file");
  return data::load_trajectories(dir.trajectories());
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline nlohmann::json scores_json(const eval::ScoreSummary& s) {
  return {{"linear_count", s.linear_count}, {"max_rounding_error", s.max_rounding_error}, {"undecided", s.undecided}};
}

}  // namespace detail

/// Creates the directory and records the resolved config and its fingerprint
/// as `<command>.config`.
inline void prepare(const RunDir& dir, const RunConfig& cfg, const std::string& command) {
  validate(cfg);
  std::error_code ec;
  std::filesystem::create_directories(dir.root, ec);
  if (ec) throw IoError("cannot create " + dir.root.string() + ": " + ec.message());
  detail::write_text(dir.file(command + ".config"),
                     "# command = " + command + "\n# fingerprint = " + fingerprint(cfg) + "\n" + render(cfg));
}

inline data::IsotropicGaussianMixture toy_data(const RunConfig& cfg) {
  return data::sinusoid_mixture(cfg.model.seq_len, cfg.data_sigma, cfg.data_amplitude);
}

/// Fits the teacher on the sinusoid mixture; writes teacher.ckpt and the
/// per-step loss curve.
inline Model train_teacher(const RunConfig& cfg, const RunDir& dir) {
  prepare(dir, cfg, "train-teacher");
  const auto data = toy_data(cfg);
  std::mt19937_64 rng(cfg.seed);
  Model net(cfg.model, rng);
  train::FlowTrainConfig fc = cfg.teacher;
  fc.seed = cfg.seed + 1;
  const auto losses =
      train::train_flow_model(net, [&](std::size_t b, auto& g) { return data.sample<float>(b, g); }, fc);
  std::ostringstream curve;
  for (std::size_t i = 0; i < losses.size(); ++i) curve << nlohmann::json{{"step", i}, {"loss", losses[i]}}.dump() << '\n';
  detail::write_text(dir.file("teacher_loss.jsonl"), curve.str());
  detail::save_model(dir.teacher(), net);
  return net;
}

/// Integrates the teacher from seeded noise and stores every (x_t, t, u_t).
inline data::TrajectorySet collect(const RunConfig& cfg, const RunDir& dir) {
  prepare(dir, cfg, "collect");
  const Model teacher = detail::load_model(dir.teacher(), "teacher checkpoint").snapshot();
  auto set = data::collect(teacher, cfg.schedule(), teacher.config().seq_len, teacher.config().d_state,
                           cfg.trajectories, cfg.seed + 2);
  try {
    data::save_trajectories(dir.trajectories(), set);
  } catch (const std::runtime_error& e) {
    throw IoError(e.what());
  }
  return set;
}

/// Selective transfer from the teacher. Writes the per-step report, the
/// student checkpoint and a summary. On divergence the failing state and the
/// last student are dumped before the error propagates.
inline train::TransferResult transfer(const RunConfig& cfg, const RunDir& dir) {
  prepare(dir, cfg, "transfer");
  const Model teacher = detail::load_model(dir.teacher(), "teacher checkpoint").snapshot();
  const auto set = detail::load_set(dir);
  std::mt19937_64 rng(cfg.seed + 3);
  Model student = train::make_student(teacher, rng);
  std::ofstream report(dir.file("transfer_report.jsonl"), std::ios::binary | std::ios::trunc);
  if (!report) throw IoError("cannot write " + dir.file("transfer_report.jsonl").string());
  const auto t0 = std::chrono::steady_clock::now();
  train::TransferResult result;
  try {
    result = train::train_transfer(student, teacher, set, cfg.transfer_config(), &report);
  } catch (const train::DivergenceError& e) {
    report.flush();
    detail::write_text(dir.file("divergence_state.json"), e.state.dump(2) + "\n");
    detail::save_model(dir.file("student_diverged.ckpt"), student);
    throw;
  }
  report.flush();
  if (!report) throw IoError("write failed: transfer_report.jsonl");
  detail::save_model(dir.student(), student);
  const nlohmann::json summary = {{"final_scores", result.final_scores},
                                  {"scores", detail::scores_json(eval::summarize_scores(result.final_scores))},
                                  {"fingerprint", fingerprint(cfg)},
                                  {"seed", cfg.seed}};
  detail::write_text(dir.file("transfer_summary.json"), summary.dump(2) + "\n");
  detail::write_text(dir.file("transfer_timings.json"),
                     nlohmann::json{{"seconds", detail::seconds_since(t0)}}.dump(2) + "\n");
  return result;
}

/// Rounds every selection score and drops the unused branch.
inline Model finalize(const RunConfig& cfg, const RunDir& dir) {
  prepare(dir, cfg, "finalize");
  Model m = detail::load_model(dir.student(), "student checkpoint");
  m.finalize_layers();
  detail::save_model(dir.finalized(), m);
  return m;
}

/// Euler samples from the chosen checkpoint (teacher, student or finalized),
/// one flattened sample per CSV row.
inline DenseArray<float> sample(const RunConfig& cfg, const RunDir& dir, const std::string& which, std::size_t count) {
  prepare(dir, cfg, "sample");
  std::filesystem::path src;
  if (which == "teacher") src = dir.teacher();
  else if (which == "student") src = dir.student();
  else if (which == "finalized") src = dir.finalized();
  else throw ConfigError("sample: model must be teacher, student or finalized, got '" + which + "'");
  const Model m = detail::load_model(src, "checkpoint");
  std::mt19937_64 rng(cfg.seed + 4);
  auto noise = DenseArray<float>::randn({count, m.config().seq_len, m.config().d_state}, rng);
  auto x = flow::sample(m, cfg.schedule(), std::move(noise), false).x0_hat;
  std::ostringstream os;
  os.precision(9);
  const std::size_t row = x.numel() / count;
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t k = 0; k < row; ++k) os << (k ? "," : "") << x[i * row + k];
    os << '\n';
  }
  detail::write_text(dir.file("samples_" + which + ".csv"), os.str());
  return x;
}

inline nlohmann::json bench_json(const eval::ScalingReport& r) {
  auto kernel = [](const eval::KernelScaling& k) {
    nlohmann::json t = nlohmann::json::array();
    for (const auto& e : k.timings) t.push_back({{"n", e.n}, {"median_seconds", e.median_seconds}});
    return nlohmann::json{{"timings", t}, {"slope", k.slope}, {"resolution_warning", k.resolution_warning}};
  };
  return {{"d", r.d},
          {"repeats", r.repeats},
          {"oracle_error", r.oracle_error},
          {"linear", kernel(r.linear)},
          {"softmax", kernel(r.softmax)}};
}

inline eval::ScalingReport bench_attn(const RunConfig& cfg, const RunDir& dir) {
  prepare(dir, cfg, "bench-attn");
  const auto report = eval::bench_attention(cfg.bench_sizes, cfg.bench_d, cfg.bench_repeats, cfg.seed);
  detail::write_text(dir.file("bench_attn.json"), bench_json(report).dump(2) + "\n");
  return report;
}

/// Paired-noise comparison of the teacher, the mixed student and the
/// finalized student. Metrics go to eval_report.json.
inline nlohmann::json evaluate(const RunConfig& cfg, const RunDir& dir) {
  prepare(dir, cfg, "eval");
  const auto t0 = std::chrono::steady_clock::now();
  const Model teacher = detail::load_model(dir.teacher(), "teacher checkpoint").snapshot();
  const auto ctx = eval::EvalContext::make(teacher, cfg.schedule(), cfg.eval_samples, cfg.seed + 5,
                                           cfg.eval_projections);
  std::mt19937_64 drng(cfg.seed + 6);
  const auto fresh = toy_data(cfg).sample<float>(cfg.eval_samples, drng);
  nlohmann::json metrics;
  metrics["w2_teacher_data"] =
      eval::sliced_wasserstein2(ctx.teacher_samples, fresh, ctx.n_projections, ctx.projection_seed);
  if (std::filesystem::exists(dir.student())) {
    const Model student = model::load_checkpoint<float>(dir.student());
    Model fin = student;
    fin.finalize_layers();
    const auto mixed = ctx.samples(student);
    const auto final_samples = ctx.samples(fin);
    metrics["w2_mixed"] = ctx.w2_to_teacher(mixed);
    metrics["w2_final"] = ctx.w2_to_teacher(final_samples);
    metrics["finalization_gap"] = eval::finalization_gap(mixed, final_samples);
    const auto s = eval::summarize_scores(student.scores());
    metrics["linear_count"] = s.linear_count;
    metrics["max_rounding_error"] = s.max_rounding_error;
  }
  const nlohmann::json report = {{"metrics", metrics}, {"fingerprint", fingerprint(cfg)}, {"seed", cfg.seed}};
  detail::write_text(dir.file("eval_report.json"), report.dump(2) + "\n");
  detail::write_text(dir.file("eval_timings.json"),
                     nlohmann::json{{"seconds", detail::seconds_since(t0)}}.dump(2) + "\n");
  return report;
}

/// One ablation cell: a name plus the transfer settings it changes.
struct AblationCell {
  std::string name;
  train::TransferConfig config;
  std::uint64_t seed = 0;
};

/// The ablation grid: target ∈ {2, 4, 6} over `seeds` seeds with the full
/// method, plus target-4 runs without L_reg and with the MSE objective.
inline std::vector<AblationCell> ablation_grid(const RunConfig& cfg) {
  std::vector<AblationCell> cells;
  for (std::size_t s = 0; s < cfg.ablation_seeds; ++s) {
    const std::uint64_t seed = cfg.seed + 100 * (s + 1);
    for (std::size_t target : {2u, 4u, 6u}) {
      AblationCell c{"target" + std::to_string(target), cfg.transfer_config(), seed};
      c.config.target = target;
      c.config.seed = seed;
      cells.push_back(c);
    }
    AblationCell mse{"mse", cfg.transfer_config(), seed};
    mse.config.objective = train::Objective::kMse;
    mse.config.seed = seed;
    cells.push_back(mse);
  }
  AblationCell no_reg{"no_reg", cfg.transfer_config(), cfg.seed + 100};
  no_reg.config.use_regularization = false;
  no_reg.config.seed = cfg.seed + 100;
  cells.push_back(no_reg);
  return cells;
}

inline nlohmann::json cell_json(const eval::CellResult& r, std::uint64_t seed) {
  return {{"name", r.name},
          {"seed", seed},
          {"target", r.config.target},
          {"objective", train::objective_name(r.config.objective)},
          {"use_regularization", r.config.use_regularization},
          {"final_scores", r.final_scores},
          {"scores", detail::scores_json(r.scores)},
          {"w2_mixed", r.w2_mixed},
          {"w2_final", r.w2_final},
          {"finalization_gap", r.gap}};
}

/// Runs every ablation cell from the stored teacher and trajectories. Each
/// finished cell is appended to ablation.jsonl; `progress` gets one line per
/// cell.
inline std::vector<eval::CellResult> ablate(const RunConfig& cfg, const RunDir& dir, std::ostream* progress = nullptr) {
  prepare(dir, cfg, "ablate");
  const Model teacher = detail::load_model(dir.teacher(), "teacher checkpoint").snapshot();
  const auto set = detail::load_set(dir);
  const auto ctx = eval::EvalContext::make(teacher, cfg.schedule(), cfg.eval_samples, cfg.seed + 5,
                                           cfg.eval_projections);
  std::ofstream out(dir.file("ablation.jsonl"), std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + dir.file("ablation.jsonl").string());
  nlohmann::json timings = nlohmann::json::array();
  std::vector<eval::CellResult> results;
  for (const auto& cell : ablation_grid(cfg)) {
    auto r = eval::run_cell(cell.name, teacher, set, cell.config, ctx, cell.seed + 3);
    out << cell_json(r, cell.seed).dump() << '\n' << std::flush;
    timings.push_back({{"name", cell.name}, {"seed", cell.seed}, {"seconds", r.seconds}});
    if (progress) {
      *progress << cell.name << " seed " << cell.seed << ": w2_final " << r.w2_final << " gap " << r.gap << " ("
                << r.seconds << " s)\n";
    }
    results.push_back(std::move(r));
  }
  detail::write_text(dir.file("ablation_timings.json"), timings.dump(2) + "\n");
  return results;
}

/// Per-grid-time record counts and mean norms of the stored trajectories.
inline nlohmann::json stats(const RunConfig& cfg, const RunDir& dir) {
  prepare(dir, cfg, "stats");
  const auto set = detail::load_set(dir);
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& s : data::per_time_stats(set)) {
    rows.push_back({{"t", s.t}, {"records", s.records}, {"mean_x_norm", s.mean_x_norm}, {"mean_u_norm", s.mean_u_norm}});
  }
  const nlohmann::json out = {{"trajectories", set.n_trajectories},
                              {"records", set.count()},
                              {"euler_recurrence_error", data::euler_recurrence_error(set)},
                              {"per_time", rows}};
  detail::write_text(dir.file("trajectory_stats.json"), out.dump(2) + "\n");
  return out;
}

}  // namespace linflow::app

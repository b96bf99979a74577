// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance [--criteria 1,2,...] [--work DIR]
//
// Criteria 6 and 7 train a default-size teacher (cached in the work
// directory) and run long transfers; the others finish in seconds.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <type_traits>
#include <vector>

#include <CLI11.hpp>

#include "linflow/app/pipeline.hpp"
#include "linflow/attention/attention.hpp"
#include "linflow/attention/attention_ops.hpp"
#include "linflow/grad/grad_check.hpp"

namespace {

using namespace linflow;
using Model = model::ToyTransformer<float>;
using Af = DenseArray<float>;
using Ad = DenseArray<double>;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

// ---------------------------------------------------------------- 1
Outcome associativity() {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<std::size_t> pick_n(1, 256), pick_half_d(1, 32);
  double worst = 0.0;
  const std::size_t cases = 120;
  for (std::size_t c = 0; c < cases; ++c) {
    std::size_t n = pick_n(rng), d = 2 * pick_half_d(rng);
    if (c == 0) n = 256, d = 64;
    const Af q = Af::randn({n, d}, rng), k = Af::randn({n, d}, rng), v = Af::randn({n, d}, rng);
    const float scale = 1.0f / std::sqrt(static_cast<float>(d));
    const Af hq = Af::randn({d, d / 2}, rng, scale), hk = Af::randn({d, d / 2}, rng, scale);
    worst = std::max(worst, static_cast<double>(max_abs_diff(attention::linear_attention(q, k, v, hq, hk),
                                                             attention::kernel_quadratic_attention(q, k, v, hq, hk))));
  }
  return {worst < 1e-4, std::to_string(cases) + " cases, max |diff| " + fmt(worst) + " (< 1e-4)"};
}

// ---------------------------------------------------------------- 2
Outcome hedgehog_invariants() {
  std::mt19937_64 rng(102);
  const std::size_t rows = 1000, d = 64;
  const Af phi = attention::hedgehog_feature_map(Af::randn({rows, d}, rng),
                                                 Af::randn({d, d / 2}, rng, 1.0f / std::sqrt(float(d))));
  bool positive = true;
  double worst = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    double s = 0.0;
    for (std::size_t f = 0; f < d; ++f) {
      positive &= phi(i, f) > 0.0f;
      s += phi(i, f);
    }
    worst = std::max(worst, std::abs(s - 2.0));
  }
  return {positive && worst <= 1e-5,
          std::string(positive ? "all features positive" : "non-positive feature") + ", max |row sum - 2| " +
              fmt(worst) + " (<= 1e-5)"};
}

// ---------------------------------------------------------------- 3
Outcome complexity_scaling() {
  const auto r = eval::bench_attention({1024, 2048, 4096, 8192}, 64, 5, 103);
  const bool pass = r.linear.slope < 1.3 && r.softmax.slope > 1.7;
  return {pass, "slope linear " + fmt(r.linear.slope) + " (< 1.3), softmax " + fmt(r.softmax.slope) + " (> 1.7)" +
                    (r.linear.resolution_warning || r.softmax.resolution_warning ? ", timer resolution warning" : "")};
}

// ---------------------------------------------------------------- 4
Outcome score_identity() {
  std::mt19937_64 rng(104);
  model::ModelConfig c;
  c.n_layers = 2;
  c.d_model = 16;
  c.seq_len = 6;
  c.mlp_ratio = 2;
  auto teacher = Model(c, rng).cast<double>();
  auto student = Model(c, rng).cast<double>();
  teacher.set_score(0, 0.7);
  student.set_score(1, 0.2);
  std::uniform_real_distribution<double> pick_t(0.05, 0.95);
  double identity = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Ad x = Ad::randn({4, c.seq_len, c.d_state}, rng);
    const double t = pick_t(rng);
    const Ad two_call = [&] {
      Ad a = flow::score_from_velocity(teacher, x, t);
      const Ad b = flow::score_from_velocity(student, x, t);
      for (std::size_t i = 0; i < a.numel(); ++i) a[i] -= b[i];
      return a;
    }();
    const std::vector<double> tv(4, t);
    const Ad closed = flow::score_difference_from_velocities(teacher(x, std::span<const double>(tv)),
                                                            student(x, std::span<const double>(tv)), t);
    identity = std::max(identity, max_abs_diff(two_call, closed));
  }
  // Point mass at 0: u(x, t) = x/t and the score of N(0, t²I) is −x/t².
  auto point_mass = [](const Ad& x, std::span<const double> t) {
    Ad u(x.shape());
    const std::size_t per = x.numel() / t.size();
    for (std::size_t i = 0; i < x.numel(); ++i) u[i] = x[i] / t[i / per];
    return u;
  };
  double analytic = 0.0;
  for (double t : {0.05, 0.1, 0.3, 0.5, 0.7, 0.9, 0.95}) {
    const Ad x = Ad::randn({8, 3}, rng);
    const Ad s = flow::score_from_velocity<double>(point_mass, x, t);
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const double expected = -x[i] / (t * t);
      analytic = std::max(analytic, std::abs(s[i] - expected) / std::abs(expected));
    }
  }
  return {identity < 1e-6 && analytic < 1e-6,
          "two-call vs closed form " + fmt(identity) + " (< 1e-6), point-mass rel. error " + fmt(analytic) + " (< 1e-6)"};
}

// ---------------------------------------------------------------- 5
model::ModelConfig tiny_config() {
  model::ModelConfig c;
  c.n_layers = 2;
  c.d_model = 8;
  c.seq_len = 4;
  c.mlp_ratio = 2;
  return c;
}

/// Worst relative error over every parameter tensor of a 32-bit model, against
/// 64-bit central differences of the same objective.
template <typename Objective>
double parameter_check(const Model& m32, Objective objective) {
  const auto m64 = m32.cast<double>();
  double worst = 0.0;
  for (std::size_t i = 0; i < m32.parameters().size(); ++i) {
    auto fn = [&](auto p) {
      using S = typename std::remove_cvref_t<decltype(p.value())>::value_type;
      const auto& model = std::get<const model::ToyTransformer<S>&>(std::tie(m32, m64));
      auto& tape = p.tape();
      auto b = model.bind(tape, false);
      b.vars[i] = p;
      return objective(model, b, tape);
    };
    worst = std::max(worst, grad_check_widened<float>(fn, m32.parameters()[i].value, 1e-4));
  }
  return worst;
}

Outcome gradient_checks() {
  std::mt19937_64 rng(105);
  const Model teacher = Model(tiny_config(), rng).snapshot();
  Model student = train::make_student(teacher, rng);
  student.set_score(0, 0.65f);
  student.set_score(1, 0.3f);
  const std::size_t batch = 2;
  const Af x = Af::randn({batch, 4, 2}, rng);
  const std::vector<float> t = {0.75f, 0.5f}, t_next = {0.625f, 0.375f};
  const Af u = teacher(x, std::span<const float>(t));
  std::map<std::string, double> err;

  const auto fm = flow::make_fm_batch(Af::randn({batch, 4, 2}, rng), rng, [](auto&) { return 0.6; });
  err["fm_loss"] = parameter_check(student, [&](const auto& model, const auto& b, auto& tape) {
    using S = typename std::remove_cvref_t<decltype(model)>::value_type;
    flow::FmBatch<S> fb{fm.x0.template cast<S>(), fm.eps.template cast<S>(), fm.xt.template cast<S>(),
                        std::vector<S>(fm.t.begin(), fm.t.end())};
    auto fwd = [&](Tape<S>&, Var<S> xv, std::span<const S> tv) { return model.forward(b, xv, tv); };
    return flow::fm_loss(tape, fwd, fb);
  });
  err["mse_loss"] = parameter_check(student, [&](const auto& model, const auto& b, auto& tape) {
    using S = typename std::remove_cvref_t<decltype(model)>::value_type;
    const std::vector<S> ts(t.begin(), t.end());
    return train::mse_loss(model, b, tape, x.cast<S>(), u.cast<S>(), std::span<const S>(ts));
  });

  // ADM surrogate against differences of ⟨−Δ, x̂_t(θ)⟩ with Δ frozen.
  {
    Tape<float> base;
    const auto parts = train::adm_loss(student, student.bind(base, false), base, teacher, x,
                                       std::span<const float>(t), std::span<const float>(t_next), 0.02);
    const Ad neg_delta = [&] {
      Ad d = parts.delta.cast<double>();
      for (auto& v : d.values()) v = -v;
      return d;
    }();
    const auto m64 = student.cast<double>();
    const std::vector<double> td(t.begin(), t.end());
    std::vector<double> step(batch);
    for (std::size_t i = 0; i < batch; ++i) step[i] = static_cast<double>(t_next[i]) - t[i];
    double worst = 0.0;
    for (std::size_t i = 0; i < student.parameters().size(); ++i) {
      Tape<float> tape;
      auto b = student.bind(tape, false);
      b.vars[i] = tape.leaf(student.parameters()[i].value, true);
      auto s = train::adm_loss(student, b, tape, teacher, x, std::span<const float>(t), std::span<const float>(t_next),
                               0.02)
                   .surrogate;
      tape.backward(s);
      const Af analytic = tape.has_grad(b.vars[i]) ? tape.grad(b.vars[i]) : Af(student.parameters()[i].value.shape());
      auto frozen = [&](Var<double> p) {
        auto& tp = p.tape();
        auto bd = m64.bind(tp, false);
        bd.vars[i] = p;
        auto uv = m64.forward(bd, tp.constant(x.cast<double>()), std::span<const double>(td));
        auto x_hat = uv * tp.constant(train::per_sample_constant<double>(x.shape(), std::span<const double>(step))) +
                     tp.constant(x.cast<double>());
        return mul_scalar(sum(tp.constant(neg_delta) * x_hat), 1.0 / static_cast<double>(x.numel()));
      };
      const auto numeric =
          detail::numeric_gradient<double>(frozen, student.parameters()[i].value.cast<double>(), 1e-4, true);
      worst = std::max(worst, detail::max_relative_error(analytic, numeric, 1e-3));
    }
    err["adm_loss"] = worst;
  }

  // Constraint loss: tape STE gradient against differences of its surrogate.
  {
    const std::vector<float> r = {0.9f, 0.2f, 0.65f, 0.4f, 0.51f, 0.05f, 0.8f, 0.3f};
    const std::size_t target = 3;
    Tape<float> tape;
    std::vector<Var<float>> vars;
    for (float v : r) vars.push_back(tape.leaf(Af::scalar(v), true));
    tape.backward(train::constraint_loss(std::span<const Var<float>>(vars), target));
    auto surrogate = [&](const std::vector<double>& z) {
      double count = 0.0;
      for (std::size_t l = 0; l < z.size(); ++l) count += 1.0 - (z[l] + (std::floor(r[l] + 0.5) - r[l]));
      return (count - static_cast<double>(target)) * (count - static_cast<double>(target));
    };
    double worst = 0.0;
    for (std::size_t l = 0; l < r.size(); ++l) {
      std::vector<double> up(r.begin(), r.end()), down(r.begin(), r.end());
      up[l] += 1e-4;
      down[l] -= 1e-4;
      const double fd = (surrogate(up) - surrogate(down)) / 2e-4;
      worst = std::max(worst, std::abs(tape.grad(vars[l])[0] - fd) / std::max(std::abs(fd), 1e-3));
    }
    err["constraint_loss"] = worst;
  }

  const Af readout = Af::randn(x.shape(), rng);
  err["model_forward"] = parameter_check(student, [&](const auto& model, const auto& b, auto& tape) {
    using S = typename std::remove_cvref_t<decltype(model)>::value_type;
    const std::vector<S> ts(t.begin(), t.end());
    auto out = model.forward(b, tape.constant(x.cast<S>()), std::span<const S>(ts));
    return sum(out * tape.constant(readout.cast<S>()));
  });

  bool pass = true;
  std::string detail;
  for (const auto& [name, e] : err) {
    pass &= e < 1e-3;
    detail += (detail.empty() ? "" : ", ") + name + " " + fmt(e);
  }
  return {pass, detail + " (each < 1e-3)"};
}

// ---------------------------------------------------------------- 6, 7
/// Default-size run directory with a trained teacher and stored trajectories,
/// reused when the recorded fingerprint matches.
app::RunDir prepared_run(const std::filesystem::path& work, const app::RunConfig& cfg) {
  const app::RunDir dir{work / "default"};
  auto recorded = [&](const std::string& command) {
    std::ifstream is(dir.file(command + ".config"));
    std::string line;
    std::getline(is, line);
    std::getline(is, line);
    return line;
  };
  const std::string expected = "# fingerprint = " + app::fingerprint(cfg);
  if (!std::filesystem::exists(dir.teacher()) || recorded("train-teacher") != expected) {
    std::cerr << "training the default teacher (cached in " << dir.root.string() << ")\n";
    app::train_teacher(cfg, dir);
  }
  if (!std::filesystem::exists(dir.trajectories()) || recorded("collect") != expected) {
    app::collect(cfg, dir);
  }
  return dir;
}

Outcome transfer_convergence(const std::filesystem::path& work, double& seconds) {
  const app::RunConfig cfg;
  const auto dir = prepared_run(work, cfg);
  const Model teacher = model::load_checkpoint<float>(dir.teacher()).snapshot();
  const auto set = data::load_trajectories(dir.trajectories());
  const auto t0 = std::chrono::steady_clock::now();
  const auto ctx = eval::EvalContext::make(teacher, cfg.schedule(), cfg.eval_samples, cfg.seed + 5, cfg.eval_projections);
  const auto r = eval::run_cell("default", teacher, set, cfg.transfer_config(), ctx, cfg.seed + 3);
  seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool count_ok = r.scores.linear_count == cfg.transfer.target;
  const bool binary = r.scores.max_rounding_error < 1e-3;
  const bool quality = r.w2_final <= 1.5 * r.w2_mixed;
  const bool budget = seconds <= 15 * 60;
  std::string scores;
  for (float v : r.final_scores) scores += (scores.empty() ? "" : " ") + fmt(v);
  return {count_ok && binary && quality && budget,
          "linear " + std::to_string(r.scores.linear_count) + "/" + std::to_string(cfg.transfer.target) +
              ", max |r - round r| " + fmt(r.scores.max_rounding_error) + " (< 1e-3), W2 final " + fmt(r.w2_final) +
              " vs 1.5 x mixed " + fmt(1.5 * r.w2_mixed) + ", " + fmt(seconds) + " s (<= 900), r = [" + scores + "]"};
}

Outcome ablation_trends(const std::filesystem::path& work, double& seconds) {
  const app::RunConfig cfg;
  const auto dir = prepared_run(work, cfg);
  const auto t0 = std::chrono::steady_clock::now();
  const auto cells = app::ablate(cfg, dir, &std::cerr);
  seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  std::map<std::string, std::vector<double>> w2;
  double gap_reg = -1.0, gap_noreg = -1.0;
  for (const auto& c : cells) {
    w2[c.name].push_back(c.w2_final);
    if (c.name == "target4" && gap_reg < 0) gap_reg = c.gap;
    if (c.name == "no_reg") gap_noreg = c.gap;
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0;
    for (double e : v) s += e;
    return s / static_cast<double>(v.size());
  };
  const double w2_2 = mean(w2["target2"]), w2_4 = mean(w2["target4"]), w2_6 = mean(w2["target6"]);
  const double w2_mse = mean(w2["mse"]);
  const bool trend = w2_2 <= w2_4 && w2_4 <= w2_6;
  const bool reg = gap_noreg >= 10.0 * gap_reg && gap_noreg > 0.0;
  const bool objective = w2_4 <= w2_mse;
  const bool budget = seconds <= 90 * 60;
  return {trend && reg && objective && budget,
          std::string("(a) W2 by target 2/4/6: ") + fmt(w2_2) + " / " + fmt(w2_4) + " / " + fmt(w2_6) +
              (trend ? " ok" : " not monotone") + "; (b) gap no-reg " + fmt(gap_noreg) + " vs 10 x " + fmt(gap_reg) +
              (reg ? " ok" : " too small") + "; (c) W2 adm " + fmt(w2_4) + " vs mse " + fmt(w2_mse) +
              (objective ? " ok" : " worse") + "; " + fmt(seconds) + " s (<= 5400)"};
}

// ---------------------------------------------------------------- 8
Outcome fixed_point() {
  std::mt19937_64 rng(108);
  const Model teacher = Model(model::ModelConfig{}, rng).snapshot();
  Model student = teacher;
  student.set_frozen(false);
  student.set_scores_trainable(false);
  const auto schedule = flow::FlowSchedule::uniform(8);
  const auto set = data::collect(teacher, schedule, teacher.config().seq_len, teacher.config().d_state, 128, 109);
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < set.count(); ++i) {
    if (set.next_t(i) >= schedule.t_min_clamp) usable.push_back(i);
  }
  double worst = 0.0;
  std::size_t batches = 0;
  for (std::size_t s = 0; s < usable.size(); s += 32, ++batches) {
    const std::vector<std::size_t> idx(usable.begin() + s, usable.begin() + std::min(s + 32, usable.size()));
    const auto b = data::gather(set, idx);
    Tape<float> tape;
    const auto bound = student.bind(tape, true);
    auto parts = train::adm_loss(student, bound, tape, teacher, b.x, std::span<const float>(b.t),
                                 std::span<const float>(b.t_next), schedule.t_min_clamp);
    tape.backward(parts.surrogate);
    double sq = 0.0;
    for (const auto& v : bound.vars) {
      if (!tape.has_grad(v)) continue;
      for (float g : tape.grad(v).values()) sq += double(g) * g;
    }
    worst = std::max(worst, std::sqrt(sq));
  }
  return {worst < 1e-6, std::to_string(batches) + " batches, max gradient norm " + fmt(worst) + " (< 1e-6)"};
}

// ---------------------------------------------------------------- 9
Outcome determinism(const std::filesystem::path& work) {
  app::RunConfig cfg;
  cfg.seed = 9;
  cfg.model.n_layers = 4;
  cfg.model.d_model = 16;
  cfg.model.seq_len = 8;
  cfg.model.mlp_ratio = 2;
  cfg.teacher.steps = 200;
  cfg.trajectories = 64;
  cfg.transfer.total_steps = 150;
  cfg.transfer.target = 2;
  cfg.transfer.alpha_start = 3.0;
  cfg.transfer.alpha_end = 1.0;
  cfg.eval_samples = 256;
  auto pipeline = [&](const app::RunDir& dir) {
    std::filesystem::remove_all(dir.root);
    app::train_teacher(cfg, dir);
    app::collect(cfg, dir);
    app::transfer(cfg, dir);
    app::finalize(cfg, dir);
    app::evaluate(cfg, dir);
  };
  const app::RunDir a{work / "determinism_a"}, b{work / "determinism_b"};
  pipeline(a);
  pipeline(b);
  auto bytes = [](const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), {});
  };
  std::size_t compared = 0;
  std::string differing;
  for (const auto& entry : std::filesystem::directory_iterator(a.root)) {
    const std::string name = entry.path().filename().string();
    if (name.find("_timings") != std::string::npos) continue;
    ++compared;
    if (!std::filesystem::exists(b.file(name)) || bytes(entry.path()) != bytes(b.file(name))) {
      differing += " " + name;
    }
  }
  return {differing.empty() && compared >= 10,
          std::to_string(compared) + " artifacts compared" + (differing.empty() ? ", all identical" : "; differ:" + differing)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"Acceptance criteria for the selective-transfer toy"};
  std::vector<int> selected = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::string work = "acceptance_work";
  cli.add_option("--criteria", selected, "criteria to run")->delimiter(',')->check(CLI::Range(1, 9));
  cli.add_option("--work", work, "scratch directory for cached runs")->capture_default_str();
  CLI11_PARSE(cli, argc, argv);
  std::filesystem::create_directories(work);

  struct Criterion {
    const char* name;
    double budget_seconds;
    std::function<Outcome(double&)> run;
  };
  const std::map<int, Criterion> criteria = {
      {1, {"associativity oracle", 10, [](double&) { return associativity(); }}},
      {2, {"hedgehog invariants", 1, [](double&) { return hedgehog_invariants(); }}},
      {3, {"complexity scaling", 120, [](double&) { return complexity_scaling(); }}},
      {4, {"score identity", 5, [](double&) { return score_identity(); }}},
      {5, {"gradient checks", 120, [](double&) { return gradient_checks(); }}},
      {6, {"selective-transfer convergence", 900, [&](double& s) { return transfer_convergence(work, s); }}},
      {7, {"ablation trends", 5400, [&](double& s) { return ablation_trends(work, s); }}},
      {8, {"fixed-point sanity", 60, [](double&) { return fixed_point(); }}},
      {9, {"determinism", 0, [&](double&) { return determinism(work); }}},
  };

  int failures = 0;
  for (int id : std::set<int>(selected.begin(), selected.end())) {
    const auto& c = criteria.at(id);
    const auto t0 = std::chrono::steady_clock::now();
    double timed = -1.0;  // criteria 6 and 7 time only the training they budget
    Outcome o;
    try {
      o = c.run(timed);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const double charged = timed >= 0 ? timed : elapsed;
    if (c.budget_seconds > 0 && charged > c.budget_seconds) {
      o.pass = false;
      o.detail += "; over the " + fmt(c.budget_seconds) + " s budget";
    }
    failures += o.pass ? 0 : 1;
    std::cout << "criterion " << id << " " << (o.pass ? "PASS" : "FAIL") << ": " << c.name << ": " << o.detail << " ["
              << fmt(elapsed) << " s]" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}

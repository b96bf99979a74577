// linflow: command-line front end for the toy selective-transfer pipeline.
//
// Exit codes: 0 success, 1 internal error, 2 bad usage or config, 3 missing
// input file, 4 training divergence, 5 I/O or file-format error.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "linflow/app/pipeline.hpp"
#include "linflow/io/binary.hpp"

namespace {

using namespace linflow;

enum ExitCode { kOk = 0, kInternal = 1, kConfig = 2, kMissing = 3, kDivergence = 4, kIo = 5 };

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "run";
};

struct TransferFlags {
  std::optional<std::size_t> target;
  std::optional<double> lambda;
  std::optional<double> alpha_start;
  std::optional<double> alpha_end;
  std::optional<std::size_t> steps;
  std::optional<std::string> objective;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "flat key = value config file");
  cmd->add_option("--seed", f.seed, "master seed (overrides the config)");
  cmd->add_option("--out", f.out, "run directory")->capture_default_str();
}

void add_transfer(CLI::App* cmd, TransferFlags& f) {
  cmd->add_option("--target", f.target, "number of layers to linearize");
  cmd->add_option("--lambda", f.lambda, "weight of the constraint and regularization terms");
  cmd->add_option("--alpha-start", f.alpha_start, "initial regularization exponent");
  cmd->add_option("--alpha-end", f.alpha_end, "final regularization exponent");
  cmd->add_option("--steps", f.steps, "transfer steps");
  cmd->add_option("--objective", f.objective, "adm or mse")->check(CLI::IsMember({"adm", "mse"}));
}

app::RunConfig resolve(const CommonFlags& c, const TransferFlags& t) {
  app::RunConfig cfg = c.config.empty() ? app::RunConfig{} : app::load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (t.target) cfg.transfer.target = *t.target;
  if (t.lambda) cfg.transfer.lambda = *t.lambda;
  if (t.alpha_start) cfg.transfer.alpha_start = *t.alpha_start;
  if (t.alpha_end) cfg.transfer.alpha_end = *t.alpha_end;
  if (t.steps) cfg.transfer.total_steps = *t.steps;
  if (t.objective) app::set_value(cfg, "transfer.objective", *t.objective);
  app::validate(cfg);
  std::cerr << "config fingerprint " << app::fingerprint(cfg) << " seed " << cfg.seed << "\n";
  return cfg;
}

void print_scores(const std::vector<float>& r) {
  const auto s = eval::summarize_scores(r);
  std::cout << "r =";
  for (float v : r) std::cout << ' ' << v;
  std::cout << "\nlinear layers " << s.linear_count << ", max |r - round(r)| " << s.max_rounding_error << "\n";
}

int run(int argc, char** argv) {
  CLI::App cli{"Selective transfer of a toy rectified-flow transformer to linear attention"};
  cli.require_subcommand(1);
  CommonFlags common;
  TransferFlags tf;
  std::string which = "finalized";
  std::size_t count = 256;

  auto* teacher_cmd = cli.add_subcommand("train-teacher", "fit the teacher flow model on the toy data");
  auto* collect_cmd = cli.add_subcommand("collect", "store teacher sampling trajectories");
  auto* transfer_cmd = cli.add_subcommand("transfer", "selective transfer to a mixed-attention student");
  auto* finalize_cmd = cli.add_subcommand("finalize", "round the scores and drop unused branches");
  auto* sample_cmd = cli.add_subcommand("sample", "write Euler samples of a checkpoint as CSV");
  auto* bench_cmd = cli.add_subcommand("bench-attn", "time linear against softmax attention");
  auto* eval_cmd = cli.add_subcommand("eval", "sliced-W2 report for the run directory");
  auto* ablate_cmd = cli.add_subcommand("ablate", "target, regularization and objective ablations");
  auto* stats_cmd = cli.add_subcommand("stats", "summarize the stored trajectories");
  for (auto* cmd : {teacher_cmd, collect_cmd, transfer_cmd, finalize_cmd, sample_cmd, bench_cmd, eval_cmd, ablate_cmd,
                    stats_cmd}) {
    add_common(cmd, common);
  }
  add_transfer(transfer_cmd, tf);
  add_transfer(ablate_cmd, tf);
  sample_cmd->add_option("--model", which, "teacher, student or finalized")
      ->check(CLI::IsMember({"teacher", "student", "finalized"}))
      ->capture_default_str();
  sample_cmd->add_option("--count", count, "number of samples")->check(CLI::PositiveNumber)->capture_default_str();

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = cli.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    const app::RunConfig cfg = resolve(common, tf);
    const app::RunDir dir{common.out};
    if (teacher_cmd->parsed()) {
      app::train_teacher(cfg, dir);
      std::cout << "teacher written to " << dir.teacher().string() << "\n";
    } else if (collect_cmd->parsed()) {
      const auto set = app::collect(cfg, dir);
      std::cout << set.count() << " records from " << set.n_trajectories << " trajectories written to "
                << dir.trajectories().string() << "\n";
    } else if (transfer_cmd->parsed()) {
      print_scores(app::transfer(cfg, dir).final_scores);
    } else if (finalize_cmd->parsed()) {
      const auto m = app::finalize(cfg, dir);
      std::cout << "layer kinds:";
      for (auto k : m.layer_kinds()) std::cout << ' ' << (k == model::LayerKind::kLinear ? "linear" : "softmax");
      std::cout << "\n";
    } else if (sample_cmd->parsed()) {
      app::sample(cfg, dir, which, count);
      std::cout << count << " samples written to " << dir.file("samples_" + which + ".csv").string() << "\n";
    } else if (bench_cmd->parsed()) {
      const auto r = app::bench_attn(cfg, dir);
      std::cout << "slope linear " << r.linear.slope << ", softmax " << r.softmax.slope << "\n";
      if (r.linear.resolution_warning || r.softmax.resolution_warning) {
        std::cerr << "warning: some medians are below the timer resolution floor\n";
      }
    } else if (eval_cmd->parsed()) {
      std::cout << app::evaluate(cfg, dir)["metrics"].dump(2) << "\n";
    } else if (ablate_cmd->parsed()) {
      app::ablate(cfg, dir, &std::cout);
    } else if (stats_cmd->parsed()) {
      const auto s = app::stats(cfg, dir);
      std::cout << s["records"] << " records, Euler recurrence error " << s["euler_recurrence_error"] << "\n";
      for (const auto& row : s["per_time"]) {
        std::cout << "t " << row["t"] << ": " << row["records"] << " records, |x| " << row["mean_x_norm"] << ", |u| "
                  << row["mean_u_norm"] << "\n";
      }
    }
    return kOk;
  } catch (const app::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return kConfig;
  } catch (const app::MissingInputError& e) {
    std::cerr << e.what() << "\n";
    return kMissing;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << e.what() << "\n";
    return kMissing;
  } catch (const train::DivergenceError& e) {
    std::cerr << e.what() << "; state dumped to " << (std::filesystem::path(common.out) / "divergence_state.json").string()
              << "\n";
    return kDivergence;
  } catch (const io::FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kIo;
  } catch (const app::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInternal;
  }
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }

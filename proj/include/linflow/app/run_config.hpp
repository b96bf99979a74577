#pragma once

// Flat `key = value` run configuration shared by every CLI command. Lines
// starting with '#' are comments; unknown keys are rejected.

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <type_traits>
#include <vector>

#include "linflow/flow/schedule.hpp"
#include "linflow/model/toy_transformer.hpp"
#include "linflow/train/flow_training.hpp"
#include "linflow/train/trainer.hpp"

namespace linflow::app {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::uint64_t seed = 0;
  model::ModelConfig model;
  double data_sigma = 0.1;
  double data_amplitude = 1.0;
  train::FlowTrainConfig teacher;
  std::size_t sample_steps = 8;
  double t_min_clamp = 0.02;
  std::size_t trajectories = 512;
  train::TransferConfig transfer;
  std::size_t eval_samples = 2048;
  std::size_t eval_projections = 128;
  std::vector<std::size_t> bench_sizes{1024, 2048, 4096, 8192};
  std::size_t bench_d = 64;
  std::size_t bench_repeats = 5;
  std::size_t ablation_seeds = 3;

  flow::FlowSchedule schedule() const { return flow::FlowSchedule::uniform(sample_steps, t_min_clamp); }

  /// Transfer settings with the derived fields (clamp, seed) filled in.
  train::TransferConfig transfer_config() const {
    train::TransferConfig c = transfer;
    c.t_min_clamp = t_min_clamp;
    c.seed = seed;
    return c;
  }
};

namespace detail {

template <typename V>
V parse_number(const std::string& key, const std::string& text) {
  V v{};
  const char* end = text.data() + text.size();
  auto [p, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc{} || p != end) throw ConfigError("config: bad value for " + key + ": '" + text + "'");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("config: bad boolean for " + key + ": '" + text + "'");
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

/// One accessor per key: reads a textual value into the config and renders
/// the current value back.
struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename V, typename Ref>
Field number_field(const std::string& key, Ref ref) {
  return {[key, ref](RunConfig& c, const std::string& s) { ref(c) = parse_number<V>(key, s); },
          [ref](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<V>) return format_double(ref(c));
            else return std::to_string(ref(c));
          }};
}

inline const std::map<std::string, Field>& fields() {
  using S = std::size_t;
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> f;
    f["seed"] = number_field<std::uint64_t>("seed", [](auto& c) -> auto& { return c.seed; });
    f["model.n_layers"] = number_field<S>("model.n_layers", [](auto& c) -> auto& { return c.model.n_layers; });
    f["model.d_model"] = number_field<S>("model.d_model", [](auto& c) -> auto& { return c.model.d_model; });
    f["model.seq_len"] = number_field<S>("model.seq_len", [](auto& c) -> auto& { return c.model.seq_len; });
    f["model.mlp_ratio"] = number_field<S>("model.mlp_ratio", [](auto& c) -> auto& { return c.model.mlp_ratio; });
    f["data.sigma"] = number_field<double>("data.sigma", [](auto& c) -> auto& { return c.data_sigma; });
    f["data.amplitude"] =
        number_field<double>("data.amplitude", [](auto& c) -> auto& { return c.data_amplitude; });
    f["teacher.steps"] = number_field<S>("teacher.steps", [](auto& c) -> auto& { return c.teacher.steps; });
    f["teacher.batch_size"] =
        number_field<S>("teacher.batch_size", [](auto& c) -> auto& { return c.teacher.batch_size; });
    f["teacher.lr"] = number_field<double>("teacher.lr", [](auto& c) -> auto& { return c.teacher.lr; });
    f["sample.steps"] = number_field<S>("sample.steps", [](auto& c) -> auto& { return c.sample_steps; });
    f["sample.t_min_clamp"] =
        number_field<double>("sample.t_min_clamp", [](auto& c) -> auto& { return c.t_min_clamp; });
    f["collect.trajectories"] =
        number_field<S>("collect.trajectories", [](auto& c) -> auto& { return c.trajectories; });
    f["transfer.target"] = number_field<S>("transfer.target", [](auto& c) -> auto& { return c.transfer.target; });
    f["transfer.lambda"] =
        number_field<double>("transfer.lambda", [](auto& c) -> auto& { return c.transfer.lambda; });
    f["transfer.alpha_start"] =
        number_field<double>("transfer.alpha_start", [](auto& c) -> auto& { return c.transfer.alpha_start; });
    f["transfer.alpha_end"] =
        number_field<double>("transfer.alpha_end", [](auto& c) -> auto& { return c.transfer.alpha_end; });
    f["transfer.steps"] =
        number_field<S>("transfer.steps", [](auto& c) -> auto& { return c.transfer.total_steps; });
    f["transfer.lr"] = number_field<double>("transfer.lr", [](auto& c) -> auto& { return c.transfer.lr; });
    f["transfer.score_lr"] =
        number_field<double>("transfer.score_lr", [](auto& c) -> auto& { return c.transfer.score_lr; });
    f["transfer.warmup_fraction"] = number_field<double>(
        "transfer.warmup_fraction", [](auto& c) -> auto& { return c.transfer.warmup_fraction; });
    f["transfer.weight_decay"] = number_field<double>(
        "transfer.weight_decay", [](auto& c) -> auto& { return c.transfer.weight_decay; });
    f["transfer.batch_size"] =
        number_field<S>("transfer.batch_size", [](auto& c) -> auto& { return c.transfer.batch_size; });
    f["transfer.objective"] = {
        [](RunConfig& c, const std::string& s) {
          if (s == "adm") c.transfer.objective = train::Objective::kAdm;
          else if (s == "mse") c.transfer.objective = train::Objective::kMse;
          else throw ConfigError("config: transfer.objective must be adm or mse, got '" + s + "'");
        },
        [](const RunConfig& c) { return std::string(train::objective_name(c.transfer.objective)); }};
    f["transfer.use_regularization"] = {
        [](RunConfig& c, const std::string& s) {
          c.transfer.use_regularization = parse_bool("transfer.use_regularization", s);
        },
        [](const RunConfig& c) { return std::string(c.transfer.use_regularization ? "true" : "false"); }};
    f["eval.samples"] = number_field<S>("eval.samples", [](auto& c) -> auto& { return c.eval_samples; });
    f["eval.projections"] =
        number_field<S>("eval.projections", [](auto& c) -> auto& { return c.eval_projections; });
    f["bench.sizes"] = {
        [](RunConfig& c, const std::string& s) {
          c.bench_sizes.clear();
          std::stringstream ss(s);
          for (std::string item; std::getline(ss, item, ',');) {
            c.bench_sizes.push_back(parse_number<S>("bench.sizes", trim(item)));
          }
        },
        [](const RunConfig& c) {
          std::string out;
          for (S n : c.bench_sizes) out += (out.empty() ? "" : ",") + std::to_string(n);
          return out;
        }};
    f["bench.d"] = number_field<S>("bench.d", [](auto& c) -> auto& { return c.bench_d; });
    f["bench.repeats"] = number_field<S>("bench.repeats", [](auto& c) -> auto& { return c.bench_repeats; });
    f["ablate.seeds"] = number_field<S>("ablate.seeds", [](auto& c) -> auto& { return c.ablation_seeds; });
    return f;
  }();
  return table;
}

}  // namespace detail

/// Sets one key; throws ConfigError for unknown keys or malformed values.
inline void set_value(RunConfig& c, const std::string& key, const std::string& value) {
  const auto& f = detail::fields();
  const auto it = f.find(key);
  if (it == f.end()) throw ConfigError("config: unknown key '" + key + "'");
  it->second.set(c, detail::trim(value));
}

/// Applies `key = value` lines from a stream on top of `c`.
inline void apply_config(RunConfig& c, std::istream& is) {
  std::string line;
  for (std::size_t lineno = 1; std::getline(is, line); ++lineno) {
    const std::string body = detail::trim(line);
    if (body.empty() || body[0] == '#') continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: line " + std::to_string(lineno) + " is not 'key = value'");
    }
    set_value(c, detail::trim(body.substr(0, eq)), body.substr(eq + 1));
  }
}

inline void validate(const RunConfig& c) {
  try {
    c.model.validate();
    (void)c.schedule();
    c.transfer_config().validate(c.model.n_layers);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (c.trajectories == 0 || c.eval_samples == 0 || c.eval_projections == 0) {
    throw ConfigError("config: counts must be positive");
  }
  if (c.teacher.steps == 0 || c.teacher.batch_size == 0) throw ConfigError("config: teacher steps must be positive");
  if (c.bench_sizes.size() < 2 || c.bench_d < 2 || c.bench_repeats == 0) {
    throw ConfigError("config: bench needs two sizes, d >= 2 and repeats >= 1");
  }
}

/// Canonical text: every key in sorted order with its resolved value.
inline std::string render(const RunConfig& c) {
  std::string out;
  for (const auto& [key, field] : detail::fields()) out += key + " = " + field.get(c) + "\n";
  return out;
}

/// 64-bit FNV-1a of the canonical text, as 16 hex digits.
inline std::string fingerprint(const RunConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : render(c)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) {
    throw std::filesystem::filesystem_error("cannot open config", path,
                                            std::make_error_code(std::errc::no_such_file_or_directory));
  }
  RunConfig c;
  apply_config(c, is);
  return c;
}

}  // namespace linflow::app

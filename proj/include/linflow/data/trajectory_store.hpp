#pragma once

// Teacher trajectory corpus.
//
// File layout (little-endian): magic "LVTJ", u32 version, u32 record count,
// u32 seq_len, u32 d_state, u32 trajectory count, u32 grid length, f64 grid
// times, then the terminal samples x0 of every trajectory as f32, then the
// records: u32 trajectory id, u32 step index, f32 t, f32 x_t[seq_len*d_state],
// f32 u_t[seq_len*d_state].

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "linflow/core/dense_array.hpp"
#include "linflow/flow/flow.hpp"
#include "linflow/io/binary.hpp"

namespace linflow::data {

inline constexpr std::uint32_t kTrajectoryVersion = 1;

/// Teacher input/output pairs along Euler trajectories, stored row-major:
/// record i has state x[i] and teacher velocity u[i], each [seq_len, d_state].
struct TrajectorySet {
  std::size_t seq_len = 0;
  std::size_t d_state = 0;
  std::size_t n_trajectories = 0;
  std::vector<double> grid;
  DenseArray<float> terminal;  ///< [n_trajectories, seq_len, d_state], not training data
  std::vector<std::uint32_t> trajectory_id;
  std::vector<std::uint32_t> step;
  std::vector<float> t;
  DenseArray<float> x;  ///< [count, seq_len, d_state]
  DenseArray<float> u;  ///< [count, seq_len, d_state]

  std::size_t count() const noexcept { return t.size(); }
  std::size_t sample_numel() const noexcept { return seq_len * d_state; }
  std::span<const float> x_of(std::size_t i) const {
    return {x.data() + i * sample_numel(), sample_numel()};
  }
  std::span<const float> u_of(std::size_t i) const {
    return {u.data() + i * sample_numel(), sample_numel()};
  }
  /// Time of the grid node following record i.
  double next_t(std::size_t i) const { return grid.at(step.at(i) + 1); }
};

/// Samples `n_trajectories` noise draws x1 ~ N(0, I) from `seed` and integrates
/// the teacher over the schedule, keeping every (t, x_t, u_t) with t > 0.
/// Teacher evaluations are batched `eval_batch` trajectories at a time.
template <typename Teacher>
TrajectorySet collect(const Teacher& teacher, const flow::FlowSchedule& schedule, std::size_t seq_len,
                      std::size_t d_state, std::size_t n_trajectories, std::uint64_t seed,
                      std::size_t eval_batch = 256) {
  if (n_trajectories == 0) throw std::invalid_argument("collect: need at least one trajectory");
  schedule.validate();
  TrajectorySet set;
  set.seq_len = seq_len;
  set.d_state = d_state;
  set.n_trajectories = n_trajectories;
  set.grid = schedule.t_grid;
  const std::size_t steps = schedule.steps();
  const std::size_t m = seq_len * d_state;
  const std::size_t count = n_trajectories * steps;
  set.x = DenseArray<float>({count, seq_len, d_state});
  set.u = DenseArray<float>({count, seq_len, d_state});
  set.terminal = DenseArray<float>({n_trajectories, seq_len, d_state});
  set.trajectory_id.resize(count);
  set.step.resize(count);
  set.t.resize(count);

  std::mt19937_64 rng(seed);
  const DenseArray<float> noise = DenseArray<float>::randn({n_trajectories, seq_len, d_state}, rng);

  for (std::size_t start = 0; start < n_trajectories; start += eval_batch) {
    const std::size_t nb = std::min(eval_batch, n_trajectories - start);
    DenseArray<float> xb({nb, seq_len, d_state});
    std::copy_n(noise.data() + start * m, nb * m, xb.data());
    for (std::size_t s = 0; s < steps; ++s) {
      const float tc = static_cast<float>(set.grid[s]);
      const float tn = static_cast<float>(set.grid[s + 1]);
      const std::vector<float> tv(nb, tc);
      const DenseArray<float> ub = teacher(xb, std::span<const float>(tv));
      for (std::size_t b = 0; b < nb; ++b) {
        for (std::size_t i = 0; i < m; ++i) {
          if (!std::isfinite(ub[b * m + i])) {
            throw NonFiniteError("collect: non-finite teacher output in trajectory " +
                                 std::to_string(start + b) + " at t=" + std::to_string(tc));
          }
        }
        const std::size_t rec = (start + b) * steps + s;
        set.trajectory_id[rec] = static_cast<std::uint32_t>(start + b);
        set.step[rec] = static_cast<std::uint32_t>(s);
        set.t[rec] = tc;
        std::copy_n(xb.data() + b * m, m, set.x.data() + rec * m);
        std::copy_n(ub.data() + b * m, m, set.u.data() + rec * m);
      }
      const float h = tn - tc;
      for (std::size_t i = 0; i < xb.numel(); ++i) xb[i] = h * ub[i] + xb[i];
    }
    std::copy_n(xb.data(), nb * m, set.terminal.data() + start * m);
  }
  return set;
}

inline void write_trajectories(std::ostream& os, const TrajectorySet& set) {
  io::put_magic(os, "LVTJ");
  io::put<std::uint32_t>(os, kTrajectoryVersion);
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(set.count()));
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(set.seq_len));
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(set.d_state));
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(set.n_trajectories));
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(set.grid.size()));
  for (double g : set.grid) io::put<double>(os, g);
  for (float v : set.terminal.values()) io::put<float>(os, v);
  const std::size_t m = set.sample_numel();
  for (std::size_t i = 0; i < set.count(); ++i) {
    io::put<std::uint32_t>(os, set.trajectory_id[i]);
    io::put<std::uint32_t>(os, set.step[i]);
    io::put<float>(os, set.t[i]);
    os.write(reinterpret_cast<const char*>(set.x.data() + i * m), static_cast<std::streamsize>(m * 4));
    os.write(reinterpret_cast<const char*>(set.u.data() + i * m), static_cast<std::streamsize>(m * 4));
  }
}

inline TrajectorySet read_trajectories(std::istream& is) {
  io::expect_magic(is, "LVTJ");
  const auto version = io::get<std::uint32_t>(is, "version");
  if (version != kTrajectoryVersion) {
    throw io::FormatError("unsupported trajectory file version " + std::to_string(version));
  }
  TrajectorySet set;
  const std::size_t count = io::get<std::uint32_t>(is, "count");
  set.seq_len = io::get<std::uint32_t>(is, "seq_len");
  set.d_state = io::get<std::uint32_t>(is, "d_state");
  set.n_trajectories = io::get<std::uint32_t>(is, "trajectory count");
  const std::size_t glen = io::get<std::uint32_t>(is, "grid length");
  if (set.seq_len == 0 || set.d_state == 0 || glen < 2 || glen > (1u << 20)) {
    throw io::FormatError("corrupt trajectory header");
  }
  if (count != set.n_trajectories * (glen - 1)) throw io::FormatError("record count does not match grid");
  set.grid.resize(glen);
  for (auto& g : set.grid) g = io::get<double>(is, "grid");
  try {
    flow::FlowSchedule{set.grid}.validate();
  } catch (const std::invalid_argument& e) {
    throw io::FormatError(std::string("corrupt grid: ") + e.what());
  }
  const std::size_t m = set.sample_numel();
  set.terminal = DenseArray<float>({set.n_trajectories, set.seq_len, set.d_state});
  for (auto& v : set.terminal.values()) v = io::get<float>(is, "terminal samples");
  set.x = DenseArray<float>({count, set.seq_len, set.d_state});
  set.u = DenseArray<float>({count, set.seq_len, set.d_state});
  set.trajectory_id.resize(count);
  set.step.resize(count);
  set.t.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    set.trajectory_id[i] = io::get<std::uint32_t>(is, "trajectory id");
    set.step[i] = io::get<std::uint32_t>(is, "step");
    set.t[i] = io::get<float>(is, "t");
    if (set.trajectory_id[i] >= set.n_trajectories || set.step[i] + 1 >= glen ||
        set.t[i] != static_cast<float>(set.grid[set.step[i]])) {
      throw io::FormatError("record " + std::to_string(i) + " inconsistent with header");
    }
    if (!is.read(reinterpret_cast<char*>(set.x.data() + i * m), static_cast<std::streamsize>(m * 4)) ||
        !is.read(reinterpret_cast<char*>(set.u.data() + i * m), static_cast<std::streamsize>(m * 4))) {
      throw io::FormatError("truncated trajectory payload at record " + std::to_string(i));
    }
  }
  io::expect_end(is);
  if (!set.x.all_finite() || !set.u.all_finite() || !set.terminal.all_finite()) {
    throw io::FormatError("non-finite values in trajectory file");
  }
  return set;
}

inline void save_trajectories(const std::filesystem::path& path, const TrajectorySet& set) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_trajectories(os, set);
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

inline TrajectorySet load_trajectories(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return read_trajectories(is);
}

/// Largest violation of x_{next} = (t_next − t)·u_t + x_t over consecutive
/// records (and of the final step against the stored terminal sample).
inline double euler_recurrence_error(const TrajectorySet& set) {
  const std::size_t m = set.sample_numel();
  double worst = 0;
  for (std::size_t i = 0; i < set.count(); ++i) {
    const bool last = set.step[i] + 2 == set.grid.size();
    const float* next = last ? set.terminal.data() + set.trajectory_id[i] * m : set.x.data() + (i + 1) * m;
    if (!last && (set.trajectory_id[i + 1] != set.trajectory_id[i] || set.step[i + 1] != set.step[i] + 1)) {
      throw io::FormatError("records are not stored trajectory-major");
    }
    const float h = static_cast<float>(set.next_t(i)) - set.t[i];
    const auto x = set.x_of(i);
    const auto u = set.u_of(i);
    for (std::size_t k = 0; k < m; ++k) {
      worst = std::max(worst, static_cast<double>(std::abs(next[k] - (h * u[k] + x[k]))));
    }
  }
  return worst;
}

/// Record indices in batches covering every selected record exactly once.
/// `shuffle_seed` permutes the order deterministically; without it the file
/// order is kept. `interior_only` skips records whose successor is t = 0.
inline std::vector<std::vector<std::size_t>> iterate_batches(const TrajectorySet& set, std::size_t batch_size,
                                                             std::optional<std::uint64_t> shuffle_seed = {},
                                                             bool interior_only = false) {
  if (batch_size == 0) throw std::invalid_argument("iterate_batches: batch_size must be positive");
  std::vector<std::size_t> order;
  order.reserve(set.count());
  for (std::size_t i = 0; i < set.count(); ++i) {
    if (!interior_only || set.next_t(i) > 0.0) order.push_back(i);
  }
  if (shuffle_seed) {
    std::mt19937_64 rng(*shuffle_seed);
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t s = 0; s < order.size(); s += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(s + batch_size, order.size())));
  }
  return batches;
}

/// Gathered batch of records.
struct RecordBatch {
  DenseArray<float> x;  ///< [B, seq_len, d_state]
  DenseArray<float> u;  ///< [B, seq_len, d_state]
  std::vector<float> t;
  std::vector<float> t_next;
};

inline RecordBatch gather(const TrajectorySet& set, std::span<const std::size_t> idx) {
  const std::size_t m = set.sample_numel();
  RecordBatch b{DenseArray<float>({idx.size(), set.seq_len, set.d_state}),
                DenseArray<float>({idx.size(), set.seq_len, set.d_state}), {}, {}};
  for (std::size_t j = 0; j < idx.size(); ++j) {
    std::copy_n(set.x.data() + idx[j] * m, m, b.x.data() + j * m);
    std::copy_n(set.u.data() + idx[j] * m, m, b.u.data() + j * m);
    b.t.push_back(set.t[idx[j]]);
    b.t_next.push_back(static_cast<float>(set.next_t(idx[j])));
  }
  return b;
}

/// Per-grid-time summary for the stats command.
struct TimeStats {
  double t = 0;
  std::size_t records = 0;
  double mean_x_norm = 0;
  double mean_u_norm = 0;
};

inline std::vector<TimeStats> per_time_stats(const TrajectorySet& set) {
  std::vector<TimeStats> out(set.grid.size() - 1);
  for (std::size_t s = 0; s < out.size(); ++s) out[s].t = set.grid[s];
  for (std::size_t i = 0; i < set.count(); ++i) {
    auto& st = out[set.step[i]];
    double nx = 0, nu = 0;
    for (float v : set.x_of(i)) nx += double(v) * v;
    for (float v : set.u_of(i)) nu += double(v) * v;
    st.records += 1;
    st.mean_x_norm += std::sqrt(nx);
    st.mean_u_norm += std::sqrt(nu);
  }
  for (auto& st : out) {
    if (st.records) {
      st.mean_x_norm /= static_cast<double>(st.records);
      st.mean_u_norm /= static_cast<double>(st.records);
    }
  }
  return out;
}

}  // namespace linflow::data

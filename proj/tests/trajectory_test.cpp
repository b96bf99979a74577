#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

#include "linflow/data/toy_data.hpp"
#include "linflow/data/trajectory_store.hpp"
#include "linflow/model/toy_transformer.hpp"

namespace linflow::data {
namespace {

const auto kMixture = sinusoid_mixture();
const auto kGrid = flow::FlowSchedule::uniform(8);

std::string bytes_of(const TrajectorySet& set) {
  std::stringstream ss;
  write_trajectories(ss, set);
  return ss.str();
}

TEST(Collect, CountsRecordsAndExcludesTerminal) {
  const auto set = collect(kMixture, kGrid, 16, 2, 1, 1);
  EXPECT_EQ(set.count(), 8u);
  EXPECT_EQ(set.t.front(), 1.0f);
  EXPECT_EQ(set.t.back(), 0.125f);
  for (float t : set.t) EXPECT_GT(t, 0.0f);
  EXPECT_EQ(set.terminal.shape(), (Shape{1, 16, 2}));
}

TEST(Collect, SameSeedGivesIdenticalBytes) {
  const auto a = collect(kMixture, kGrid, 16, 2, 20, 7, 8);
  const auto b = collect(kMixture, kGrid, 16, 2, 20, 7, 8);
  const auto c = collect(kMixture, kGrid, 16, 2, 20, 8, 8);
  EXPECT_EQ(bytes_of(a), bytes_of(b));
  EXPECT_NE(bytes_of(a), bytes_of(c));
}

TEST(Collect, StoredPairsSatisfyEulerRecurrence) {
  const auto set = collect(kMixture, kGrid, 16, 2, 50, 3, 16);
  EXPECT_LT(euler_recurrence_error(set), 1e-5);
}

TEST(Collect, StoredVelocitiesMatchTeacherOnReevaluation) {
  std::mt19937_64 rng(4);
  model::ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.d_model = 8;
  const model::ToyTransformer<float> teacher(cfg, rng);
  const auto set = collect(teacher, kGrid, cfg.seq_len, cfg.d_state, 12, 5, 5);
  for (const auto& idx : iterate_batches(set, 7, 99)) {
    const auto b = gather(set, idx);
    const auto u = teacher(b.x, std::span<const float>(b.t));
    EXPECT_LT(max_abs_diff(u, b.u), 1e-5f);
  }
}

TEST(Collect, RejectsZeroTrajectoriesAndNonFiniteTeacher) {
  EXPECT_THROW(collect(kMixture, kGrid, 16, 2, 0, 1), std::invalid_argument);
  auto broken = [](const DenseArray<float>& x, std::span<const float>) {
    DenseArray<float> u(x.shape());
    u[u.numel() - 1] = std::numeric_limits<float>::quiet_NaN();
    return u;
  };
  try {
    collect(broken, kGrid, 16, 2, 3, 1);
    FAIL() << "expected NonFiniteError";
  } catch (const NonFiniteError& e) {
    EXPECT_NE(std::string(e.what()).find("trajectory 2"), std::string::npos);
  }
}

TEST(TrajectoryFile, RoundTripIsBitExact) {
  const auto set = collect(kMixture, kGrid, 16, 2, 9, 2);
  std::stringstream ss(bytes_of(set));
  const auto back = read_trajectories(ss);
  EXPECT_EQ(back.x, set.x);
  EXPECT_EQ(back.u, set.u);
  EXPECT_EQ(back.terminal, set.terminal);
  EXPECT_EQ(back.t, set.t);
  EXPECT_EQ(back.step, set.step);
  EXPECT_EQ(back.trajectory_id, set.trajectory_id);
  EXPECT_EQ(back.grid, set.grid);
  EXPECT_EQ(bytes_of(back), bytes_of(set));
}

TEST(TrajectoryFile, RejectsCorruptInput) {
  const std::string good = bytes_of(collect(kMixture, kGrid, 16, 2, 3, 2));
  auto read = [](std::string s) {
    std::stringstream ss(std::move(s));
    return read_trajectories(ss);
  };
  std::string magic = good;
  magic[1] = 'X';
  EXPECT_THROW(read(magic), io::FormatError);
  std::string version = good;
  version[4] = 9;
  EXPECT_THROW(read(version), io::FormatError);
  EXPECT_THROW(read(good.substr(0, good.size() - 10)), io::FormatError);
  EXPECT_THROW(read(good + "x"), io::FormatError);
}

TEST(Batches, CoverEveryRecordOnce) {
  const auto set = collect(kMixture, kGrid, 16, 2, 10, 2);
  EXPECT_EQ(iterate_batches(set, set.count()).size(), 1u);
  auto flat = [](const std::vector<std::vector<std::size_t>>& bs) {
    std::vector<std::size_t> out;
    for (const auto& b : bs) out.insert(out.end(), b.begin(), b.end());
    return out;
  };
  const auto a = flat(iterate_batches(set, 7, 1));
  const auto b = flat(iterate_batches(set, 7, 2));
  EXPECT_NE(a, b);
  EXPECT_EQ(a, flat(iterate_batches(set, 7, 1)));
  auto sa = a, sb = b;
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  EXPECT_EQ(sa, sb);
  ASSERT_EQ(sa.size(), set.count());
  for (std::size_t i = 0; i < sa.size(); ++i) EXPECT_EQ(sa[i], i);
}

TEST(Batches, InteriorOnlySkipsFinalStep) {
  const auto set = collect(kMixture, kGrid, 16, 2, 4, 2);
  std::size_t n = 0;
  for (const auto& b : iterate_batches(set, 5, 3, true)) {
    const auto g = gather(set, b);
    for (float tn : g.t_next) EXPECT_GT(tn, 0.0f);
    n += b.size();
  }
  EXPECT_EQ(n, 4u * 7u);
}

TEST(Stats, PerTimeCountsAndNoiseNorm) {
  const auto set = collect(kMixture, kGrid, 16, 2, 64, 2);
  const auto st = per_time_stats(set);
  ASSERT_EQ(st.size(), 8u);
  for (const auto& s : st) EXPECT_EQ(s.records, 64u);
  EXPECT_NEAR(st.front().mean_x_norm, std::sqrt(32.0), 0.5);
}

}  // namespace
}  // namespace linflow::data

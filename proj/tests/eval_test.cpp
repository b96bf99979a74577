#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "linflow/data/toy_data.hpp"
#include "linflow/eval/ablation.hpp"
#include "linflow/eval/bench.hpp"
#include "linflow/eval/metrics.hpp"
#include "linflow/train/flow_training.hpp"

namespace linflow::eval {
namespace {

using Ad = DenseArray<double>;

TEST(SlicedWasserstein, IdenticalSetsGiveZero) {
  std::mt19937_64 rng(1);
  const Ad a = Ad::randn({200, 3}, rng);
  EXPECT_EQ(sliced_wasserstein2(a, a, 16, 2), 0.0);
}

TEST(SlicedWasserstein, OneDimensionalPointSets) {
  EXPECT_DOUBLE_EQ(sliced_wasserstein2(Ad({1, 1}, std::vector<double>{0.0}), Ad({1, 1}, std::vector<double>{1.0}), 5, 3), 1.0);
  // Unequal counts use the quantile functions: {0,0} vs {1} is still 1.
  EXPECT_DOUBLE_EQ(sliced_wasserstein2(Ad({2, 1}, std::vector<double>{0.0, 0.0}), Ad({1, 1}, std::vector<double>{1.0}), 5, 3), 1.0);
}

TEST(SlicedWasserstein, SymmetricAndRejectsBadInput) {
  std::mt19937_64 rng(4);
  const Ad a = Ad::randn({100, 2}, rng), b = Ad::randn({80, 2}, rng);
  EXPECT_DOUBLE_EQ(sliced_wasserstein2(a, b, 32, 5), sliced_wasserstein2(b, a, 32, 5));
  EXPECT_THROW(sliced_wasserstein2(a, Ad({0, 2}), 4, 0), std::invalid_argument);
  EXPECT_THROW(sliced_wasserstein2(a, b, 0, 0), std::invalid_argument);
  EXPECT_THROW(sliced_wasserstein2(a, Ad::randn({10, 3}, rng), 4, 0), ShapeError);
}

// Shifting N(0, I) by m moves every projection by m·θ, so the projection
// average of W2² is ‖m‖²/2 in two dimensions.
TEST(SlicedWasserstein, ShiftedGaussiansMatchClosedForm) {
  std::mt19937_64 rng(6);
  const std::size_t n = 10000;
  Ad a = Ad::randn({n, 2}, rng), b = Ad::randn({n, 2}, rng);
  const double m[2] = {1.2, -0.9};
  for (std::size_t i = 0; i < n; ++i) {
    b(i, 0) += m[0];
    b(i, 1) += m[1];
  }
  const double expected = std::hypot(m[0], m[1]) / std::sqrt(2.0);
  EXPECT_NEAR(sliced_wasserstein2(a, b, 256, 7), expected, 0.05 * expected);
}

TEST(Bench, LogLogSlopeOfPowerLaw) {
  EXPECT_NEAR(log_log_slope({1, 2, 4, 8}, {3, 12, 48, 192}), 2.0, 1e-12);
  EXPECT_THROW(log_log_slope({1}, {1}), std::invalid_argument);
}

TEST(Bench, SmallRunPassesOracleGate) {
  const auto report = bench_attention({64, 128}, 16, 2, 1);
  EXPECT_LT(report.oracle_error, 1e-4);
  EXPECT_EQ(report.linear.timings.size(), 2u);
  EXPECT_GT(report.softmax.timings[1].median_seconds, 0.0);
  EXPECT_THROW(bench_attention({128, 64}, 16, 2), std::invalid_argument);
}

model::ModelConfig small_config() {
  model::ModelConfig c;
  c.n_layers = 4;
  c.d_model = 8;
  c.seq_len = 6;
  c.d_state = 2;
  c.mlp_ratio = 2;
  return c;
}

TEST(LayerSearch, EdgeTargetsAndMonotoneDeviation) {
  std::mt19937_64 rng(8);
  const Model teacher = Model(small_config(), rng).snapshot();
  const auto [x, t] = mid_trajectory_probe(teacher, flow::FlowSchedule::uniform(8), 16, 9);
  EXPECT_FLOAT_EQ(t[0], 0.5f);
  EXPECT_TRUE(heuristic_layer_search(teacher, 0, x, std::span<const float>(t), 10).layers.empty());
  const auto all = heuristic_layer_search(teacher, 4, x, std::span<const float>(t), 10);
  ASSERT_EQ(all.layers.size(), 4u);
  std::vector<std::size_t> sorted = all.layers;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(sorted, (std::vector<std::size_t>{0, 1, 2, 3}));
  for (std::size_t i = 1; i < all.deviations.size(); ++i) EXPECT_GE(all.deviations[i], all.deviations[i - 1]);
  EXPECT_THROW(heuristic_layer_search(teacher, 5, x, std::span<const float>(t), 10), std::invalid_argument);
}

TEST(Scores, SummaryCountsAndRoundingError) {
  const auto s = summarize_scores({0.0f, 1.0f, 0.9995f, 0.3f, 0.5f});
  EXPECT_EQ(s.linear_count, 2u);
  EXPECT_NEAR(s.max_rounding_error, 0.5, 1e-12);
  EXPECT_EQ(s.undecided, 2u);
}

TEST(FinalizationGap, ZeroForBinaryScores) {
  std::mt19937_64 rng(11);
  Model m(small_config(), rng);
  m.set_score(1, 0.0f);
  const auto ctx = EvalContext::make(m.snapshot(), flow::FlowSchedule::uniform(4), 32, 12);
  Model f = m;
  f.finalize_layers();
  EXPECT_EQ(finalization_gap(ctx.samples(m), ctx.samples(f)), 0.0);
  m.set_score(2, 0.6f);
  EXPECT_GT(finalization_gap(ctx.samples(m), ctx.samples(f)), 0.0);
}

// A flow model trained on a two-component planar mixture, sampled with the
// 8-step Euler grid, lands within 0.15 sliced-W2 of fresh data.
TEST(TeacherQuality, PlanarMixtureSampledWithinTolerance) {
  const auto data = data::planar_mixture();
  model::ModelConfig c;
  c.n_layers = 2;
  c.d_model = 16;
  c.seq_len = 1;
  c.d_state = 2;
  std::mt19937_64 rng(13);
  Model net(c, rng);
  train::FlowTrainConfig fc;
  fc.steps = 1500;
  fc.batch_size = 128;
  fc.lr = 3e-3;
  fc.seed = 14;
  train::train_flow_model(net, [&](std::size_t b, auto& g) { return data.sample<float>(b, g); }, fc);
  const auto ctx = EvalContext::make(net, flow::FlowSchedule::uniform(8), 4000, 15);
  std::mt19937_64 drng(16);
  const auto fresh = data.sample<float>(4000, drng);
  EXPECT_LT(sliced_wasserstein2(ctx.teacher_samples, fresh, 128, 17), 0.15);
}

}  // namespace
}  // namespace linflow::eval

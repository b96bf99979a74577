#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "linflow/data/toy_data.hpp"
#include "linflow/flow/flow.hpp"
#include "linflow/grad/grad_check.hpp"

namespace linflow::flow {
namespace {

using A = DenseArray<double>;
using Af = DenseArray<float>;

// u(x, t) = x/t: exact velocity for data concentrated at the origin.
struct OriginVelocity {
  template <typename T>
  DenseArray<T> operator()(const DenseArray<T>& x, std::span<const T> t) const {
    DenseArray<T> u(x.shape());
    const std::size_t m = x.numel() / t.size();
    for (std::size_t i = 0; i < x.numel(); ++i) u[i] = x[i] / t[i / m];
    return u;
  }
};

struct ConstantVelocity {
  double c;
  template <typename T>
  DenseArray<T> operator()(const DenseArray<T>& x, std::span<const T>) const {
    return DenseArray<T>(x.shape(), static_cast<T>(c));
  }
};

TEST(AddNoise, EndpointsAreExact) {
  std::mt19937_64 rng(1);
  const Af x0 = Af::randn({3, 4}, rng);
  const Af eps = Af::randn({3, 4}, rng);
  EXPECT_EQ(add_noise(x0, eps, 0.0f), x0);
  EXPECT_EQ(add_noise(x0, eps, 1.0f), eps);
}

TEST(AddNoise, Arithmetic) {
  const A out = add_noise(A({1}, std::vector<double>{2}), A({1}, std::vector<double>{-1}), 0.25);
  EXPECT_DOUBLE_EQ(out[0], 1.25);
  EXPECT_THROW(add_noise(A({1}), A({1}), 1.5), std::out_of_range);
  EXPECT_THROW(add_noise(A({1}), A({1}), -0.1), std::out_of_range);
  EXPECT_THROW(add_noise(A({1}), A({2}), 0.5), ShapeError);
}

TEST(VelocityTarget, Arithmetic) {
  const A v = velocity_target(A({2}, std::vector<double>{1, 0}), A({2}, std::vector<double>{0, 1}));
  EXPECT_EQ(v, A({2}, std::vector<double>{-1, 1}));
  const A same({3}, 0.7);
  EXPECT_EQ(velocity_target(same, same), A({3}));
}

TEST(VelocityTarget, MeanSquaredNormOfPureNoiseIsDimension) {
  std::mt19937_64 rng(7);
  const std::size_t n = 100000;
  const A eps = A::randn({n, 2}, rng);
  const A v = velocity_target(A({n, 2}), eps);
  double acc = 0;
  for (double e : v.values()) acc += e * e;
  EXPECT_NEAR(acc / n, 2.0, 0.06);
}

// Per-dimension linear model u = x ⊙ θ, θ ∈ R^2.
auto scale_model(Var<double> theta) {
  return [theta](Tape<double>&, Var<double> x, std::span<const double>) { return x * theta; };
}

TEST(FmLoss, ExactVelocityModelGivesZero) {
  std::mt19937_64 rng(3);
  auto batch = make_fm_batch(A::randn({64, 2}, rng), rng, [](auto& r) {
    return std::uniform_real_distribution<double>(0.01, 0.99)(r);
  });
  Tape<double> tape;
  auto oracle = [&](Tape<double>& tp, Var<double>, std::span<const double>) {
    return tp.constant(velocity_target(batch.x0, batch.eps));
  };
  EXPECT_EQ(fm_loss(tape, oracle, batch).value()[0], 0.0);
}

TEST(FmLoss, ZeroModelOnZeroDataGivesDimension) {
  std::mt19937_64 rng(5);
  const std::size_t k = 3;
  auto batch = make_fm_batch(A({20000, k}), rng, [](auto& r) {
    return std::uniform_real_distribution<double>(0.01, 0.99)(r);
  });
  Tape<double> tape;
  auto zero = [](Tape<double>& tp, Var<double> x, std::span<const double>) {
    return tp.constant(A(x.shape()));
  };
  EXPECT_NEAR(fm_loss(tape, zero, batch).value()[0], double(k), 0.05 * k);
}

TEST(FmLoss, WeightFunctionScalesPerSample) {
  std::mt19937_64 rng(9);
  auto batch = make_fm_batch(A::randn({16, 2}, rng), rng, [](auto& r) {
    return std::uniform_real_distribution<double>(0.1, 0.9)(r);
  });
  Tape<double> tape;
  auto zero = [](Tape<double>& tp, Var<double> x, std::span<const double>) {
    return tp.constant(A(x.shape()));
  };
  const double base = fm_loss(tape, zero, batch).value()[0];
  const double doubled = fm_loss(tape, zero, batch, [](double) { return 2.0; }).value()[0];
  EXPECT_NEAR(doubled, 2 * base, 1e-12);
}

TEST(FmLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  const auto batch = make_fm_batch(A::randn({32, 2}, rng), rng, [](auto& r) {
    return std::uniform_real_distribution<double>(0.05, 0.95)(r);
  });
  auto fn = [&](Var<double> theta) { return fm_loss(theta.tape(), scale_model(theta), batch); };
  EXPECT_LT(grad_check<double>(fn, A({2}, std::vector<double>{0.3, -0.8}), 1e-4), 1e-3);
}

TEST(EulerStep, ZeroAndConstantModels) {
  std::mt19937_64 rng(2);
  const A x = A::randn({2, 3}, rng);
  EXPECT_EQ(euler_step(ConstantVelocity{0.0}, x, 0.75, 0.5), x);
  const A y = euler_step(ConstantVelocity{2.0}, x, 0.75, 0.5);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(y[i], x[i] - 0.25 * 2.0);
  EXPECT_THROW(euler_step(ConstantVelocity{0.0}, x, 0.5, 0.5), std::invalid_argument);
  EXPECT_THROW(euler_step(ConstantVelocity{0.0}, x, 0.5, 0.75), std::invalid_argument);
}

TEST(Sample, OriginTrajectoryIsLinearInTime) {
  std::mt19937_64 rng(4);
  const Af eps = Af::randn({5, 16, 2}, rng);
  const auto sched = FlowSchedule::uniform(8);
  const auto res = sample(OriginVelocity{}, sched, eps, true);
  ASSERT_EQ(res.trajectory.size(), sched.t_grid.size());
  for (std::size_t s = 0; s < sched.t_grid.size(); ++s) {
    const float t = static_cast<float>(sched.t_grid[s]);
    for (std::size_t i = 0; i < eps.numel(); ++i) {
      EXPECT_NEAR(res.trajectory[s][i], t * eps[i], 1e-5);
    }
  }
  EXPECT_EQ(res.x0_hat, res.trajectory.back());
}

TEST(Sample, SingleStepGrid) {
  std::mt19937_64 rng(6);
  const A x1 = A::randn({3, 2}, rng);
  const auto res = sample(ConstantVelocity{1.5}, FlowSchedule::uniform(1), x1);
  for (std::size_t i = 0; i < x1.numel(); ++i) EXPECT_DOUBLE_EQ(res.x0_hat[i], x1[i] - 1.5);
  EXPECT_TRUE(res.trajectory.empty());
}

TEST(Sample, RejectsEmptyOrMalformedGrid) {
  FlowSchedule empty;
  EXPECT_THROW(sample(ConstantVelocity{0}, empty, A({1, 2})), std::invalid_argument);
  FlowSchedule bad{{1.0, 0.6, 0.7, 0.0}};
  EXPECT_THROW(sample(ConstantVelocity{0}, bad, A({1, 2})), std::invalid_argument);
}

TEST(Schedule, UniformGridShapeAndClampRange) {
  const auto s = FlowSchedule::uniform(8);
  EXPECT_EQ(s.steps(), 8u);
  EXPECT_EQ(s.t_grid.front(), 1.0);
  EXPECT_EQ(s.t_grid.back(), 0.0);
  EXPECT_DOUBLE_EQ(s.t_grid[4], 0.5);
  EXPECT_THROW(FlowSchedule::uniform(8, 0.0), std::invalid_argument);
  EXPECT_THROW(FlowSchedule::uniform(8, 0.9), std::invalid_argument);
}

// A single Gaussian N(μ, σ²I) has the closed-form flow map x0 = μ + σ·x1,
// so Euler error can be measured exactly as the step count doubles.
TEST(Sample, EulerConvergesAtFirstOrder) {
  std::vector<A> mean{A({1, 2}, std::vector<double>{0.8, -0.4})};
  const data::IsotropicGaussianMixture gauss(mean, {1.0}, 0.4);
  std::mt19937_64 rng(8);
  const A x1 = A::randn({64, 1, 2}, rng);
  auto error = [&](std::size_t steps) {
    const A x0 = sample(gauss, FlowSchedule::uniform(steps), x1).x0_hat;
    double worst = 0;
    for (std::size_t i = 0; i < x1.numel(); ++i) {
      worst = std::max(worst, std::abs(x0[i] - (mean[0][i % 2] + 0.4 * x1[i])));
    }
    return worst;
  };
  double prev = error(8);
  for (std::size_t steps : {16, 32, 64}) {
    const double cur = error(steps);
    EXPECT_GE(std::log2(prev / cur), 0.9) << steps;
    prev = cur;
  }
}

TEST(Score, OriginVelocityGivesGaussianScore) {
  std::mt19937_64 rng(10);
  const A x = A::randn({4, 3}, rng);
  for (double t : {0.1, 0.5, 0.9}) {
    const A s = score_from_velocity(OriginVelocity{}, x, t);
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(s[i], -x[i] / (t * t), 1e-12);
  }
}

TEST(Score, CollapsingVelocityIsZeroAtOrigin) {
  auto collapse = [](const A& x, std::span<const double> t) {
    A u(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) u[i] = -x[i] / (1 - t[0]);
    return u;
  };
  const A s = score_from_velocity(collapse, A({1, 2}), 0.3);
  EXPECT_EQ(s, A({1, 2}));
}

TEST(Score, MixtureScoreFromVelocityMatchesClosedForm) {
  const auto mix = data::sinusoid_mixture();
  std::mt19937_64 rng(12);
  for (double t : {0.1, 0.5, 0.9}) {
    const A x0 = mix.sample<double>(32, rng);
    const A xt = add_noise(x0, A::randn(x0.shape(), rng), t);
    const A got = score_from_velocity(mix, xt, t);
    const std::vector<double> tv(32, t);
    const A want = mix.score(xt, std::span<const double>(tv));
    double num = 0, den = 0;
    for (std::size_t i = 0; i < got.numel(); ++i) {
      num += (got[i] - want[i]) * (got[i] - want[i]);
      den += want[i] * want[i];
    }
    EXPECT_LT(std::sqrt(num / den), 1e-3) << "t=" << t;
  }
}

TEST(Score, ClampIsReported) {
  ScoreDiagnostics diag;
  const A s = score_from_velocity(OriginVelocity{}, A({1, 1}, 1.0), 0.01, 0.02, &diag);
  EXPECT_TRUE(diag.clamped);
  EXPECT_DOUBLE_EQ(diag.t_used, 0.02);
  EXPECT_NEAR(s[0], -1.0 / (0.02 * 0.02), 1e-9);
  score_from_velocity(OriginVelocity{}, A({1, 1}, 1.0), 0.5, 0.02, &diag);
  EXPECT_FALSE(diag.clamped);
}

TEST(ScoreDifference, MatchesTwoCallForm) {
  const auto mix = data::sinusoid_mixture();
  std::mt19937_64 rng(13);
  const ConstantVelocity student{0.3};
  for (float t : {0.05f, 0.3f, 0.5f, 0.8f, 1.0f}) {
    const Af x = Af::randn({8, 16, 2}, rng);
    const Af direct = score_difference(mix, student, x, t);
    const Af st = score_from_velocity(mix, x, t);
    const Af ss = score_from_velocity(student, x, t);
    double worst = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
      worst = std::max(worst, double(std::abs(direct[i] - (st[i] - ss[i]))));
    }
    EXPECT_LT(worst, 1e-6 * std::max(1.0, double(max_abs(st)))) << "t=" << t;
  }
}

TEST(ScoreDifference, IdenticalModelsAndUnitCoefficient) {
  std::mt19937_64 rng(14);
  const A x = A::randn({2, 4}, rng);
  EXPECT_EQ(score_difference(OriginVelocity{}, OriginVelocity{}, x, 0.4), A(x.shape()));
  const A d = score_difference(ConstantVelocity{1.0}, ConstantVelocity{3.0}, x, 0.5);
  for (double e : d.values()) EXPECT_EQ(e, 2.0);
}

TEST(Mixture, SamplesHaveComponentMoments) {
  const auto mix = data::planar_mixture(1.0, 0.3);
  std::mt19937_64 rng(15);
  const A x = mix.sample<double>(20000, rng);
  double mx = 0, my = 0, vy = 0;
  for (std::size_t b = 0; b < 20000; ++b) {
    mx += std::abs(x[2 * b]);
    my += x[2 * b + 1];
    vy += x[2 * b + 1] * x[2 * b + 1];
  }
  EXPECT_NEAR(mx / 20000, 1.0, 0.02);
  EXPECT_NEAR(my / 20000, 0.0, 0.01);
  EXPECT_NEAR(vy / 20000, 0.09, 0.005);
}

}  // namespace
}  // namespace linflow::flow

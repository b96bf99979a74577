#include <gtest/gtest.h>

#include <cstdint>
#include <functional>
#include <random>

#include "linflow/grad/grad_check.hpp"
#include "linflow/grad/ops.hpp"

namespace linflow {
namespace {

using A = DenseArray<double>;
using Af = DenseArray<float>;

TEST(DenseArray, RejectsMismatchedData) {
  EXPECT_THROW(A({2, 3}, std::vector<double>(5)), ShapeError);
  A a({2, 3}, 1.0);
  EXPECT_EQ(a.numel(), 6u);
  EXPECT_THROW(a.reshaped({4}), ShapeError);
}

TEST(Ops, SoftmaxOfEqualLogitsIsUniform) {
  Tape<float> tape;
  auto y = softmax_last(tape.constant(Af({2}, std::vector<float>{0, 0})));
  EXPECT_FLOAT_EQ(y.value()[0], 0.5f);
  EXPECT_FLOAT_EQ(y.value()[1], 0.5f);
}

TEST(Ops, IdentityMatmul) {
  std::mt19937_64 rng(1);
  Tape<double> tape;
  A a = A::randn({3, 5}, rng);
  auto y = matmul(tape.constant(A::identity(3)), tape.constant(a));
  EXPECT_EQ(y.value(), a);
}

TEST(Ops, GradientOfSumOfSquares) {
  Tape<double> tape;
  auto x = tape.leaf(A({2}, std::vector<double>{1, 2}), true);
  auto y = sum(x * x);
  tape.backward(y);
  EXPECT_DOUBLE_EQ(tape.grad(x)[0], 2.0);
  EXPECT_DOUBLE_EQ(tape.grad(x)[1], 4.0);
}

TEST(Ops, ShapeMismatchNamesOpAndShapes) {
  Tape<double> tape;
  auto a = tape.constant(A({2, 3}));
  auto b = tape.constant(A({4, 5}));
  try {
    matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("[2,3]"), std::string::npos);
    EXPECT_NE(msg.find("[4,5]"), std::string::npos);
  }
  EXPECT_THROW(add(a, b), ShapeError);
  EXPECT_THROW(concat_last(a, b), ShapeError);
}

TEST(Ops, BroadcastModes) {
  Tape<double> tape;
  auto x = tape.constant(A({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6}));
  auto row = tape.constant(A({3}, std::vector<double>{10, 20, 30}));
  auto col = tape.constant(A({2, 1}, std::vector<double>{1, 2}));
  auto s = tape.constant(A::scalar(2));
  EXPECT_EQ((x + row).value()[5], 36);
  EXPECT_EQ((x / col).value()[3], 2);
  EXPECT_EQ((s * x).value()[4], 10);
}

TEST(CustomGrad, SteRoundForwardRoundsBackwardPassesThrough) {
  Tape<double> tape;
  auto x = tape.leaf(A::scalar(0.7), true);
  auto y = ste_round(x);
  EXPECT_EQ(y.value()[0], 1.0);
  tape.backward(y);
  EXPECT_EQ(tape.grad(x)[0], 1.0);
}

TEST(CustomGrad, SteRoundTieGoesUp) {
  Tape<double> tape;
  EXPECT_EQ(ste_round(tape.constant(A::scalar(0.5))).value()[0], 1.0);
  EXPECT_EQ(ste_round(tape.constant(A::scalar(0.4999))).value()[0], 0.0);
}

TEST(CustomGrad, DetachBlocksGradient) {
  Tape<double> tape;
  auto x = tape.leaf(A({3}, std::vector<double>{1, -2, 3}), true);
  auto y = sum(detach(x) * x) + sum(detach(x * x));
  EXPECT_EQ(y.value()[0], 28.0);
  tape.backward(y);
  // Only the non-detached factor contributes: d/dx (c·x) = c.
  EXPECT_EQ(tape.grad(x)[0], 1.0);
  EXPECT_EQ(tape.grad(x)[1], -2.0);
  EXPECT_EQ(tape.grad(x)[2], 3.0);
}

TEST(CustomGrad, IdentityPairIsPassThrough) {
  std::mt19937_64 rng(3);
  A p = A::randn({4}, rng);
  auto fn = [](Var<double> x) {
    auto y = custom_grad<double>(
        x, [](const A& v) { return v; },
        [](const A& g, const A&, const A&) { return g; });
    return sum(exp(y));
  };
  EXPECT_LT(grad_check<double>(fn, p, 1e-5), 1e-8);
}

TEST(CustomGrad, WrongGradientShapeIsRejected) {
  Tape<double> tape;
  auto x = tape.leaf(A({3}), true);
  auto y = custom_grad<double>(
      x, [](const A& v) { return v; }, [](const A&, const A&, const A&) { return A({2}); });
  EXPECT_THROW(tape.backward(sum(y)), ShapeError);
}

TEST(GradCheck, Polynomial) {
  auto fn = [](Var<double> x) { return sum(x * x); };
  EXPECT_LT(grad_check<double>(fn, A({3}, std::vector<double>{1, 2, 3}), 1e-4), 1e-5);
}

TEST(GradCheck, SoftmaxAttentionReadout32) {
  std::mt19937_64 rng(11);
  const Af k = Af::randn({4, 8}, rng);
  const Af v = Af::randn({4, 8}, rng);
  const Af w = Af::randn({4, 8}, rng);
  auto fn = [&](Var<float> q) {
    auto& t = q.tape();
    auto s = softmax_last(mul_scalar(matmul(q, transpose(t.constant(k))), 1.0f / std::sqrt(8.0f)));
    return sum(matmul(s, t.constant(v)) * t.constant(w));
  };
  EXPECT_LT(grad_check<float>(fn, Af::randn({4, 8}, rng), 5e-2f), 1e-3);
}

TEST(GradCheck, NonFiniteOutputThrows) {
  auto fn = [](Var<double> x) { return sum(x / x); };
  EXPECT_THROW(grad_check<double>(fn, A({2}), 1e-4), NonFiniteError);
  EXPECT_THROW(grad_check<double>(fn, A({2}, 1.0), 0.0), std::invalid_argument);
}

// Every differentiable op against central differences on random rank<=3 inputs.
template <typename T>
void check_all_ops(std::uint64_t seed, T eps, double tol) {
  using Arr = DenseArray<T>;
  std::mt19937_64 rng(seed);
  const Arr b3 = Arr::randn({2, 3, 4}, rng);
  const Arr row = Arr::randn({4}, rng);
  const Arr col = Arr::uniform({2, 3, 1}, rng, T(0.5), T(1.5));
  const Arr w = Arr::randn({4, 5}, rng);
  const Arr bm = Arr::randn({2, 4, 3}, rng);
  const T one = 1, half = 0.5, p17 = 1.7, lo = -0.3, hi = 0.4;

  using V = Var<T>;
  using Fn = std::function<V(V)>;
  const std::vector<std::pair<std::string, Fn>> cases = {
      {"add", [&](V x) { return sum((x + x.tape().constant(row)) * x); }},
      {"sub", [&](V x) { return sum((x - x.tape().constant(b3)) * x); }},
      {"mul", [&](V x) { return sum(x * x.tape().constant(b3) * x); }},
      {"div_row", [&](V x) { return sum(x / x.tape().constant(col)); }},
      {"div_by_x", [&](V x) { return sum(x.tape().constant(b3) / (x * x + one)); }},
      {"neg", [&](V x) { return sum(-x * x); }},
      {"exp", [&](V x) { return sum(exp(x)); }},
      {"abs", [&](V x) { return sum(abs(x) * x.tape().constant(b3)); }},
      {"pow", [&](V x) { return sum(pow(x * x + half, p17)); }},
      {"silu", [&](V x) { return sum(silu(x) * x.tape().constant(b3)); }},
      {"clip", [&](V x) { return sum(clip(x, lo, hi) * x.tape().constant(b3)); }},
      {"matmul_shared", [&](V x) { return sq_norm(matmul(x, x.tape().constant(w))); }},
      {"matmul_batched", [&](V x) { return sq_norm(matmul(x, x.tape().constant(bm))); }},
      {"transpose", [&](V x) { return sum(transpose(x) * x.tape().constant(bm)); }},
      {"concat", [&](V x) { return sq_norm(concat_last(x, x * x)); }},
      {"softmax", [&](V x) { return sum(softmax_last(x) * x.tape().constant(b3)); }},
      {"sum_axis", [&](V x) { return sq_norm(sum_axis(x, 1, true)); }},
      {"mean", [&](V x) { return mean(x * x * x); }},
      {"rms_norm", [&](V x) { return sum(rms_norm(x, x.tape().constant(row)) * x.tape().constant(b3)); }},
      {"reshape", [&](V x) { return sq_norm(matmul(reshape(x, {6, 4}), x.tape().constant(w))); }},
  };
  for (const auto& [name, fn] : cases) {
    Arr p = Arr::randn({2, 3, 4}, rng);
    // Keep clip/abs kinks out of the stencil's reach.
    const T margin = T(3) * eps + T(0.02);
    for (auto& e : p.values()) {
      for (T kink : {T(0), lo, hi}) {
        if (std::abs(e - kink) < margin) e = kink + T(2) * margin;
      }
    }
    EXPECT_LT(grad_check<T>(fn, p, eps), tol) << name << " seed " << seed;
  }
}

class OpGradients : public ::testing::TestWithParam<int> {};

TEST_P(OpGradients, MatchFiniteDifferences64) { check_all_ops<double>(100 + GetParam(), 1e-4, 1e-6); }
TEST_P(OpGradients, MatchFiniteDifferences32) { check_all_ops<float>(200 + GetParam(), 2e-2f, 1e-3); }

INSTANTIATE_TEST_SUITE_P(RandomInputs, OpGradients, ::testing::Range(0, 5));

TEST(Tape, BackwardInvokesEachRuleExactlyOnce) {
  Tape<double> tape;
  auto x = tape.leaf(A({3}, std::vector<double>{1, 2, 3}), true);
  auto y = exp(x);
  auto z = y * x;
  auto loss = sum(z + y);
  EXPECT_EQ(tape.num_ops(), 4u);
  tape.backward(loss);
  EXPECT_EQ(tape.backward_calls(), 4u);
}

TEST(Tape, ConstantsRecordNothing) {
  Tape<double> tape;
  auto a = tape.constant(A({2}, 1.0));
  auto b = exp(a * a);
  EXPECT_EQ(tape.num_ops(), 0u);
  EXPECT_FALSE(b.requires_grad());
  auto x = tape.leaf(A({2}, 1.0), true);
  auto loss = sum(b * x);
  tape.backward(loss);
  EXPECT_FALSE(tape.has_grad(a));
  EXPECT_TRUE(tape.has_grad(x));
}

TEST(Tape, BackwardRequiresScalarLoss) {
  Tape<double> tape;
  auto x = tape.leaf(A({2}, 1.0), true);
  EXPECT_THROW(tape.backward(x * x), ShapeError);
}

}  // namespace
}  // namespace linflow

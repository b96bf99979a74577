#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "linflow/attention/attention.hpp"
#include "linflow/attention/attention_ops.hpp"
#include "linflow/grad/grad_check.hpp"

namespace linflow::attention {
namespace {

using A = DenseArray<double>;
using Af = DenseArray<float>;

// Naive double loop over Eq.-4 style weights exp(q_i·k_j / s).
template <typename T>
DenseArray<T> naive_softmax_attention(const DenseArray<T>& q, const DenseArray<T>& k,
                                      const DenseArray<T>& v, double divisor) {
  const std::size_t n = q.dim(0), d = q.dim(1), dv = v.dim(1);
  DenseArray<T> out({n, dv});
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> logits(n);
    for (std::size_t j = 0; j < n; ++j) {
      double dot = 0;
      for (std::size_t f = 0; f < d; ++f) dot += double(q(i, f)) * double(k(j, f));
      logits[j] = dot / divisor;
    }
    const double m = *std::max_element(logits.begin(), logits.end());
    double z = 0;
    for (double& l : logits) z += (l = std::exp(l - m));
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t c = 0; c < dv; ++c) out(i, c) += T(logits[j] / z * double(v(j, c)));
  }
  return out;
}

template <typename T>
void expect_inside_envelope(const DenseArray<T>& out, const DenseArray<T>& v, T slack) {
  for (std::size_t c = 0; c < v.dim(1); ++c) {
    T lo = v(0, c), hi = v(0, c);
    for (std::size_t j = 1; j < v.dim(0); ++j) {
      lo = std::min(lo, v(j, c));
      hi = std::max(hi, v(j, c));
    }
    for (std::size_t i = 0; i < out.dim(0); ++i) {
      EXPECT_GE(out(i, c), lo - slack);
      EXPECT_LE(out(i, c), hi + slack);
    }
  }
}

TEST(SoftmaxAttention, SingleTokenReturnsValue) {
  std::mt19937_64 rng(1);
  const A q = A::randn({1, 4}, rng), k = A::randn({1, 4}, rng), v = A::randn({1, 4}, rng);
  EXPECT_EQ(softmax_attention(q, k, v), v);
  EXPECT_EQ(softmax_attention(q, k, v, SimilarityScale::kD), v);
}

TEST(SoftmaxAttention, DominantKeySelectsItsValue) {
  // q = k with one key far along q's direction: logit gap 50.
  const std::size_t n = 5, d = 4;
  A k({n, d});
  for (std::size_t j = 0; j < n; ++j) k(j, j % d) = 0.1;
  A q({n, d});
  for (std::size_t i = 0; i < n; ++i) q(i, 0) = 1.0;
  k(3, 0) = 50.0 * std::sqrt(double(d)) + 0.1;
  std::mt19937_64 rng(2);
  const A v = A::randn({n, d}, rng);
  const A out = softmax_attention(q, k, v);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) EXPECT_NEAR(out(i, c), v(3, c), 1e-12);
}

TEST(SoftmaxAttention, MatchesDoubleLoop) {
  std::mt19937_64 rng(3);
  const Af q = Af::randn({8, 4}, rng), k = Af::randn({8, 4}, rng), v = Af::randn({8, 4}, rng);
  EXPECT_LT(max_abs_diff(softmax_attention(q, k, v), naive_softmax_attention(q, k, v, 2.0)), 1e-5f);
  EXPECT_LT(max_abs_diff(softmax_attention(q, k, v, SimilarityScale::kD),
                         naive_softmax_attention(q, k, v, 4.0)),
            1e-5f);
  // Larger n crosses the internal row-block boundary.
  const Af q2 = Af::randn({300, 8}, rng), k2 = Af::randn({300, 8}, rng), v2 = Af::randn({300, 3}, rng);
  EXPECT_LT(max_abs_diff(softmax_attention(q2, k2, v2), naive_softmax_attention(q2, k2, v2, std::sqrt(8.0))),
            1e-5f);
}

TEST(SoftmaxAttention, RejectsBadInput) {
  A q({3, 4}), k({3, 4}), v({2, 4});
  EXPECT_THROW(softmax_attention(q, k, v), ShapeError);
  A v2({3, 4});
  q(1, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(softmax_attention(q, k, v2), NonFiniteError);
}

TEST(Hedgehog, ZeroRowGivesHalves) {
  std::mt19937_64 rng(4);
  const A phi = hedgehog_feature_map(A({1, 4}), A::randn({4, 2}, rng));
  for (double e : phi.values()) EXPECT_DOUBLE_EQ(e, 0.5);
}

TEST(Hedgehog, PositiveWithRowSumTwo) {
  std::mt19937_64 rng(5);
  const Af phi = hedgehog_feature_map(Af::randn({200, 16}, rng), Af::randn({16, 8}, rng, 0.25f));
  for (std::size_t i = 0; i < phi.dim(0); ++i) {
    float s = 0;
    for (std::size_t f = 0; f < 16; ++f) {
      EXPECT_GT(phi(i, f), 0.0f);
      EXPECT_LT(phi(i, f), 1.0f);
      s += phi(i, f);
    }
    EXPECT_NEAR(s, 2.0f, 1e-5f);
  }
}

TEST(Hedgehog, SignSymmetry) {
  std::mt19937_64 rng(6);
  const A x = A::randn({7, 6}, rng);
  const A w = A::randn({6, 3}, rng);
  A nx = x, nw = w;
  for (auto& e : nx.values()) e = -e;
  for (auto& e : nw.values()) e = -e;
  EXPECT_LT(max_abs_diff(hedgehog_feature_map(x, w), hedgehog_feature_map(nx, nw)), 1e-15);
}

TEST(Hedgehog, OddDimensionRejected) {
  EXPECT_THROW(hedgehog_feature_map(A({2, 5}), A({5, 2})), ShapeError);
  EXPECT_THROW(hedgehog_feature_map(A({2, 4}), A({4, 3})), ShapeError);
}

TEST(LinearAttention, SingleTokenReturnsValue) {
  std::mt19937_64 rng(7);
  const Af q = Af::randn({1, 8}, rng), k = Af::randn({1, 8}, rng), v = Af::randn({1, 8}, rng);
  const Af hq = Af::randn({8, 4}, rng), hk = Af::randn({8, 4}, rng);
  EXPECT_LT(max_abs_diff(linear_attention(q, k, v, hq, hk), v), 1e-4f);
  EXPECT_LT(max_abs_diff(kernel_quadratic_attention(q, k, v, hq, hk), v), 1e-4f);
}

TEST(LinearAttention, MatchesKernelQuadraticOracle) {
  std::mt19937_64 rng(8);
  const Af q = Af::randn({64, 8}, rng), k = Af::randn({64, 8}, rng), v = Af::randn({64, 8}, rng);
  const Af hq = Af::randn({8, 4}, rng), hk = Af::randn({8, 4}, rng);
  EXPECT_LT(max_abs_diff(linear_attention(q, k, v, hq, hk), kernel_quadratic_attention(q, k, v, hq, hk)),
            1e-4f);
}

TEST(LinearAttention, AssociativityAt64Bit) {
  std::mt19937_64 rng(9);
  for (auto [n, d] : {std::pair{1, 2}, {17, 6}, {128, 32}, {256, 64}}) {
    const A q = A::randn({std::size_t(n), std::size_t(d)}, rng);
    const A k = A::randn({std::size_t(n), std::size_t(d)}, rng);
    const A v = A::randn({std::size_t(n), std::size_t(d)}, rng);
    const A hq = A::randn({std::size_t(d), std::size_t(d / 2)}, rng);
    const A hk = A::randn({std::size_t(d), std::size_t(d / 2)}, rng);
    EXPECT_LT(max_abs_diff(linear_attention(q, k, v, hq, hk), kernel_quadratic_attention(q, k, v, hq, hk)),
              1e-10)
        << n << "x" << d;
  }
}

TEST(LinearAttention, ConvexEnvelopeAndExplicitWeights) {
  std::mt19937_64 rng(10);
  const std::size_t n = 12, d = 6;
  const A q = A::randn({n, d}, rng), k = A::randn({n, d}, rng), v = A::randn({n, d}, rng);
  const A hq = A::randn({d, d / 2}, rng), hk = A::randn({d, d / 2}, rng);
  expect_inside_envelope(linear_attention(q, k, v, hq, hk), v, 1e-12);
  expect_inside_envelope(softmax_attention(q, k, v), v, 1e-12);
  // Materialise the per-query weights: positive, summing to one (up to the guard).
  const A fq = hedgehog_feature_map(q, hq), fk = hedgehog_feature_map(k, hk);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> w(n);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t f = 0; f < d; ++f) w[j] += fq(i, f) * fk(j, f);
    const double z = std::accumulate(w.begin(), w.end(), 0.0);
    for (double e : w) EXPECT_GT(e / z, 0.0);
  }
}

TEST(Attention, JointKeyValuePermutationInvariance) {
  std::mt19937_64 rng(11);
  const std::size_t n = 20, d = 8;
  const A q = A::randn({n, d}, rng), k = A::randn({n, d}, rng), v = A::randn({n, d}, rng);
  const A hq = A::randn({d, d / 2}, rng), hk = A::randn({d, d / 2}, rng);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  A kp({n, d}), vp({n, d});
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t f = 0; f < d; ++f) {
      kp(j, f) = k(perm[j], f);
      vp(j, f) = v(perm[j], f);
    }
  EXPECT_LT(max_abs_diff(softmax_attention(q, k, v), softmax_attention(q, kp, vp)), 1e-12);
  EXPECT_LT(max_abs_diff(linear_attention(q, k, v, hq, hk), linear_attention(q, kp, vp, hq, hk)), 1e-12);
}

TEST(MixedAttention, EndpointsAndMidpoint) {
  std::mt19937_64 rng(12);
  const std::size_t n = 10, d = 8;
  const Af q = Af::randn({n, d}, rng), k = Af::randn({n, d}, rng), v = Af::randn({n, d}, rng);
  const Af hq = Af::randn({d, d / 2}, rng), hk = Af::randn({d, d / 2}, rng);
  const Af soft = softmax_attention(q, k, v, SimilarityScale::kD);
  const Af lin = linear_attention(q, k, v, hq, hk);
  EXPECT_EQ(mixed_attention(q, k, v, hq, hk, 1.0f), soft);
  EXPECT_EQ(mixed_attention(q, k, v, hq, hk, 0.0f), lin);
  EXPECT_EQ(mixed_attention(q, k, v, hq, hk, 1.7f), soft);  // clipped
  const Af mid = mixed_attention(q, k, v, hq, hk, 0.5f);
  for (std::size_t i = 0; i < mid.numel(); ++i) EXPECT_NEAR(mid[i], 0.5f * (soft[i] + lin[i]), 1e-6f);
}

TEST(AttentionOps, TapeForwardMatchesPlainKernels) {
  std::mt19937_64 rng(13);
  const std::size_t n = 9, d = 6;
  const A q = A::randn({n, d}, rng), k = A::randn({n, d}, rng), v = A::randn({n, d}, rng);
  const A hq = A::randn({d, d / 2}, rng), hk = A::randn({d, d / 2}, rng);
  Tape<double> tape;
  auto Q = tape.constant(q), K = tape.constant(k), V = tape.constant(v);
  auto HQ = tape.constant(hq), HK = tape.constant(hk);
  EXPECT_LT(max_abs_diff(softmax_attention(Q, K, V).value(), softmax_attention(q, k, v)), 1e-13);
  EXPECT_LT(max_abs_diff(hedgehog_feature_map(Q, HQ).value(), hedgehog_feature_map(q, hq)), 1e-15);
  EXPECT_LT(max_abs_diff(linear_attention(Q, K, V, HQ, HK).value(), linear_attention(q, k, v, hq, hk)), 1e-13);
  auto R = tape.leaf(A::scalar(0.3), true);
  EXPECT_LT(max_abs_diff(mixed_attention(Q, K, V, HQ, HK, R).value(), mixed_attention(q, k, v, hq, hk, 0.3)),
            1e-13);
}

TEST(AttentionOps, BatchedMatchesPerSample) {
  std::mt19937_64 rng(14);
  const std::size_t b = 3, n = 5, d = 4;
  const A q = A::randn({b, n, d}, rng), k = A::randn({b, n, d}, rng), v = A::randn({b, n, d}, rng);
  const A hq = A::randn({d, d / 2}, rng), hk = A::randn({d, d / 2}, rng);
  Tape<double> tape;
  auto out = linear_attention(tape.constant(q), tape.constant(k), tape.constant(v), tape.constant(hq),
                              tape.constant(hk));
  for (std::size_t s = 0; s < b; ++s) {
    auto slice = [&](const A& x) {
      return A({n, d}, std::vector<double>(x.data() + s * n * d, x.data() + (s + 1) * n * d));
    };
    const A ref = linear_attention(slice(q), slice(k), slice(v), hq, hk);
    for (std::size_t i = 0; i < n * d; ++i) EXPECT_NEAR(out.value()[s * n * d + i], ref[i], 1e-13);
  }
}

TEST(AttentionOps, SelectionScoreGradientIsBranchDifference) {
  std::mt19937_64 rng(15);
  const std::size_t n = 6, d = 4;
  const A q = A::randn({n, d}, rng), k = A::randn({n, d}, rng), v = A::randn({n, d}, rng);
  const A hq = A::randn({d, d / 2}, rng), hk = A::randn({d, d / 2}, rng);
  const A w = A::randn({n, d}, rng);
  auto readout = [&](const A& o) {
    double s = 0;
    for (std::size_t i = 0; i < o.numel(); ++i) s += o[i] * w[i];
    return s;
  };
  const double expected = readout(softmax_attention(q, k, v, SimilarityScale::kD)) -
                          readout(linear_attention(q, k, v, hq, hk));
  Tape<double> tape;
  auto r = tape.leaf(A::scalar(0.4), true);
  auto y = sum(mixed_attention(tape.constant(q), tape.constant(k), tape.constant(v), tape.constant(hq),
                               tape.constant(hk), r) *
               tape.constant(w));
  tape.backward(y);
  EXPECT_NEAR(tape.grad(r)[0], expected, 1e-12);
  auto fn = [&](Var<double> rv) {
    auto& t = rv.tape();
    return sum(mixed_attention(t.constant(q), t.constant(k), t.constant(v), t.constant(hq), t.constant(hk), rv) *
               t.constant(w));
  };
  EXPECT_LT(grad_check<double>(fn, A::scalar(0.4), 1e-4), 1e-3);
}

TEST(AttentionOps, FullGradientCheck32) {
  std::mt19937_64 rng(16);
  const std::size_t n = 5, d = 4;
  const Af k = Af::randn({n, d}, rng), v = Af::randn({n, d}, rng);
  const Af hq = Af::randn({d, d / 2}, rng), hk = Af::randn({d, d / 2}, rng), w = Af::randn({n, d}, rng);
  auto fn = [&](Var<float> q) {
    auto& t = q.tape();
    auto r = t.constant(Af::scalar(0.6f));
    return sum(mixed_attention(q, t.constant(k), t.constant(v), t.constant(hq), t.constant(hk), r) *
               t.constant(w));
  };
  EXPECT_LT(grad_check<float>(fn, Af::randn({n, d}, rng), 5e-2f), 1e-3);
}

}  // namespace
}  // namespace linflow::attention

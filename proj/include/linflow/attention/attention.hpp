#pragma once

// Single-head, bidirectional attention over n×d matrices:
//   softmax_attention           exp(q kᵀ / s) weights, s = √d or d
//   hedgehog_feature_map        φ(x) = softmax(x W̃) ⊕ softmax(−x W̃)
//   kernel_quadratic_attention  explicit n² kernel weights φ(q_i)·φ(k_j)
//   linear_attention            same kernel reordered: φ(q)(φ(k)ᵀ v) / φ(q)(Σ φ(k)ᵀ)
//   mixed_attention             r·softmax + (1 − r)·linear, r clipped to [0, 1]

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "linflow/core/dense_array.hpp"
#include "linflow/core/kernels.hpp"

namespace linflow::attention {

/// Divisor inside exp(): √d for the standard form, d for the mixed-layer form.
enum class SimilarityScale { kSqrtD, kD };

/// Added to every linear-attention denominator.
inline constexpr double kDenominatorGuard = 1e-6;

class DegenerateFeatureMap : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
T similarity_divisor(SimilarityScale s, std::size_t d) {
  return s == SimilarityScale::kSqrtD ? std::sqrt(static_cast<T>(d)) : static_cast<T>(d);
}

/// Projection weights of one attention layer. The Hedgehog matrices are d×(d/2).
template <typename T>
struct AttentionParams {
  DenseArray<T> wq, wk, wv;
  DenseArray<T> hq, hk;

  std::size_t dim() const { return wq.dim(0); }

  void validate() const {
    const std::size_t d = wq.rank() == 2 ? wq.dim(0) : 0;
    if (d == 0 || d % 2 != 0) throw ShapeError("AttentionParams: d must be even and non-zero");
    const Shape sq{d, d}, sh{d, d / 2};
    if (wq.shape() != sq || wk.shape() != sq || wv.shape() != sq || hq.shape() != sh ||
        hk.shape() != sh) {
      throw ShapeError("AttentionParams: expected d×d projections and d×(d/2) feature maps");
    }
    for (const auto* m : {&wq, &wk, &wv, &hq, &hk})
      if (!m->all_finite()) throw NonFiniteError("AttentionParams: non-finite weights");
  }
};

namespace detail {

template <typename T>
void check_qkv(const char* op, const DenseArray<T>& q, const DenseArray<T>& k, const DenseArray<T>& v) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.shape() != k.shape() ||
      k.dim(0) != v.dim(0)) {
    throw ShapeError(std::string(op) + ": expected n×d q,k and n×d_v v, got q" + shape_str(q.shape()) +
                     " k" + shape_str(k.shape()) + " v" + shape_str(v.shape()));
  }
  if (q.dim(0) == 0) throw ShapeError(std::string(op) + ": empty sequence");
  if (!q.all_finite() || !k.all_finite() || !v.all_finite()) {
    throw NonFiniteError(std::string(op) + ": non-finite input");
  }
}

template <typename T>
void check_feature_weights(const char* op, std::size_t d, const DenseArray<T>& w) {
  if (d % 2 != 0) throw ShapeError(std::string(op) + ": feature dimension d=" + std::to_string(d) + " is odd");
  if (w.shape() != Shape{d, d / 2}) {
    throw ShapeError(std::string(op) + ": feature weights " + shape_str(w.shape()) + " for d=" +
                     std::to_string(d) + ", expected d×(d/2)");
  }
}

}  // namespace detail

/// Quadratic softmax attention, streamed in row blocks so memory stays O(block·n).
template <typename T>
DenseArray<T> softmax_attention(const DenseArray<T>& q, const DenseArray<T>& k, const DenseArray<T>& v,
                                SimilarityScale scale = SimilarityScale::kSqrtD) {
  detail::check_qkv("softmax_attention", q, k, v);
  const std::size_t n = q.dim(0), d = q.dim(1), dv = v.dim(1);
  const T inv = T(1) / similarity_divisor<T>(scale, d);
  constexpr std::size_t kBlock = 128;
  DenseArray<T> out({n, dv});
  std::vector<T> scores(std::min(kBlock, n) * n);
  for (std::size_t r0 = 0; r0 < n; r0 += kBlock) {
    const std::size_t rows = std::min(kBlock, n - r0);
    kernels::gemm(q.data() + r0 * d, k.data(), scores.data(), rows, d, n, false, true, false);
    for (std::size_t i = 0; i < rows * n; ++i) scores[i] *= inv;
    kernels::softmax_rows(scores.data(), rows, n);
    kernels::gemm(scores.data(), v.data(), out.data() + r0 * dv, rows, n, dv, false, false, false);
  }
  return out;
}

/// Hedgehog feature map; every entry lies in (0,1) and each row sums to 2.
template <typename T>
DenseArray<T> hedgehog_feature_map(const DenseArray<T>& x, const DenseArray<T>& w) {
  if (x.rank() != 2) throw ShapeError("hedgehog_feature_map: expected n×d input, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), d = x.dim(1), h = d / 2;
  detail::check_feature_weights("hedgehog_feature_map", d, w);
  DenseArray<T> proj({n, h});
  kernels::gemm(x.data(), w.data(), proj.data(), n, d, h, false, false, false);
  DenseArray<T> out({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    T* row = out.data() + i * d;
    for (std::size_t j = 0; j < h; ++j) {
      row[j] = proj(i, j);
      row[h + j] = -proj(i, j);
    }
  }
  kernels::softmax_rows(out.data(), 2 * n, h);
  return out;
}

/// Kernelised attention with all n² weights φ(q_i)·φ(k_j) formed explicitly.
/// Quadratic cost; this is the reference the linear form must reproduce.
template <typename T>
DenseArray<T> kernel_quadratic_attention(const DenseArray<T>& q, const DenseArray<T>& k,
                                         const DenseArray<T>& v, const DenseArray<T>& hq,
                                         const DenseArray<T>& hk, T guard = T(kDenominatorGuard)) {
  detail::check_qkv("kernel_quadratic_attention", q, k, v);
  const std::size_t n = q.dim(0), d = q.dim(1), dv = v.dim(1);
  const DenseArray<T> fq = hedgehog_feature_map(q, hq);
  const DenseArray<T> fk = hedgehog_feature_map(k, hk);
  DenseArray<T> out({n, dv});
  for (std::size_t i = 0; i < n; ++i) {
    T norm = 0;
    for (std::size_t j = 0; j < n; ++j) {
      T w = 0;
      for (std::size_t f = 0; f < d; ++f) w += fq(i, f) * fk(j, f);
      norm += w;
      for (std::size_t c = 0; c < dv; ++c) out(i, c) += w * v(j, c);
    }
    for (std::size_t c = 0; c < dv; ++c) out(i, c) /= norm + guard;
  }
  return out;
}

/// Linear attention: one pass over keys builds φ(k)ᵀv and Σφ(k), one pass over
/// queries reads them out. Θ(n·d²).
template <typename T>
DenseArray<T> linear_attention(const DenseArray<T>& q, const DenseArray<T>& k, const DenseArray<T>& v,
                               const DenseArray<T>& hq, const DenseArray<T>& hk,
                               T guard = T(kDenominatorGuard)) {
  detail::check_qkv("linear_attention", q, k, v);
  const std::size_t n = q.dim(0), d = q.dim(1), dv = v.dim(1);
  const DenseArray<T> fq = hedgehog_feature_map(q, hq);
  const DenseArray<T> fk = hedgehog_feature_map(k, hk);
  DenseArray<T> kv({d, dv});
  kernels::gemm(fk.data(), v.data(), kv.data(), d, n, dv, true, false, false);
  std::vector<T> ksum(d, T(0));
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t f = 0; f < d; ++f) ksum[f] += fk(j, f);
  DenseArray<T> out({n, dv});
  kernels::gemm(fq.data(), kv.data(), out.data(), n, d, dv, false, false, false);
  for (std::size_t i = 0; i < n; ++i) {
    T den = 0;
    for (std::size_t f = 0; f < d; ++f) den += fq(i, f) * ksum[f];
    if (!(den > guard)) {
      throw DegenerateFeatureMap("linear_attention: denominator " + std::to_string(den) +
                                 " at row " + std::to_string(i) + " is below the guard");
    }
    const T inv = T(1) / (den + guard);
    for (std::size_t c = 0; c < dv; ++c) out(i, c) *= inv;
  }
  return out;
}

/// r·softmax_attention + (1−r)·linear_attention with r clipped to [0,1]. A
/// branch whose weight is exactly zero is skipped.
template <typename T>
DenseArray<T> mixed_attention(const DenseArray<T>& q, const DenseArray<T>& k, const DenseArray<T>& v,
                              const DenseArray<T>& hq, const DenseArray<T>& hk, T r,
                              SimilarityScale scale = SimilarityScale::kD) {
  const T rc = std::clamp(r, T(0), T(1));
  if (rc == T(1)) return softmax_attention(q, k, v, scale);
  if (rc == T(0)) return linear_attention(q, k, v, hq, hk);
  DenseArray<T> s = softmax_attention(q, k, v, scale);
  const DenseArray<T> l = linear_attention(q, k, v, hq, hk);
  for (std::size_t i = 0; i < s.numel(); ++i) s[i] = rc * s[i] + (T(1) - rc) * l[i];
  return s;
}

}  // namespace linflow::attention

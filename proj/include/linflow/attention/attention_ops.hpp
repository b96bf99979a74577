#pragma once

// Differentiable counterparts of attention.hpp. Inputs may carry leading batch
// axes: q, k, v are [..., n, d].

#include <cmath>

#include "linflow/attention/attention.hpp"
#include "linflow/grad/ops.hpp"

namespace linflow::attention {

template <typename T>
Var<T> softmax_attention(Var<T> q, Var<T> k, Var<T> v, SimilarityScale scale = SimilarityScale::kSqrtD) {
  const T inv = T(1) / similarity_divisor<T>(scale, q.value().dim(-1));
  return matmul(softmax_last(mul_scalar(matmul(q, transpose(k)), inv)), v);
}

template <typename T>
Var<T> hedgehog_feature_map(Var<T> x, Var<T> w) {
  const std::size_t d = x.value().dim(-1);
  detail::check_feature_weights("hedgehog_feature_map", d, w.value());
  Var<T> proj = matmul(x, w);
  return concat_last(softmax_last(proj), softmax_last(neg(proj)));
}

template <typename T>
Var<T> linear_attention(Var<T> q, Var<T> k, Var<T> v, Var<T> hq, Var<T> hk,
                        T guard = T(kDenominatorGuard)) {
  Var<T> fq = hedgehog_feature_map(q, hq);
  Var<T> fk = hedgehog_feature_map(k, hk);
  Var<T> kv = matmul(transpose(fk), v);                // [..., d, d_v]
  Var<T> ksum = sum_axis(fk, -2, true);                // [..., 1, d]
  Var<T> den = add_scalar(matmul(fq, transpose(ksum)), guard);  // [..., n, 1]
  return matmul(fq, kv) / den;
}

/// Mixed layer output. `r` is a single-element value; it is clipped to [0,1].
/// When r does not require a gradient and its clipped value is exactly 0 or
/// 1, only the selected branch is evaluated (bit-identical result).
template <typename T>
Var<T> mixed_attention(Var<T> q, Var<T> k, Var<T> v, Var<T> hq, Var<T> hk, Var<T> r,
                       SimilarityScale scale = SimilarityScale::kD) {
  if (r.value().numel() != 1) throw ShapeError("mixed_attention: r must be a single element");
  Var<T> rc = clip(r, T(0), T(1));
  if (!rc.requires_grad()) {
    const T val = rc.value()[0];
    if (val == T(1)) return softmax_attention(q, k, v, scale);
    if (val == T(0)) return linear_attention(q, k, v, hq, hk);
  }
  Var<T> soft = softmax_attention(q, k, v, scale);
  Var<T> lin = linear_attention(q, k, v, hq, hk);
  return rc * soft + (T(1) - rc) * lin;
}

}  // namespace linflow::attention

#pragma once

// Plain (tape-free) numeric kernels shared by the autodiff ops, the inference
// path and the attention benchmark. GEMM is delegated to Eigen.

#include <Eigen/Core>
#include <cmath>
#include <cstddef>

#include "linflow/core/dense_array.hpp"

namespace linflow::kernels {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

/// C[m×n] (+)= op(A) · op(B) over raw row-major buffers.
template <typename T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool trans_a,
          bool trans_b, bool accumulate) {
  const auto M = static_cast<Eigen::Index>(m);
  const auto K = static_cast<Eigen::Index>(k);
  const auto N = static_cast<Eigen::Index>(n);
  MapMat<T> C(c, M, N);
  auto run = [&](const auto& A, const auto& B) {
    if (accumulate) {
      C.noalias() += A * B;
    } else {
      C.noalias() = A * B;
    }
  };
  if (!trans_a && !trans_b) {
    run(ConstMapMat<T>(a, M, K), ConstMapMat<T>(b, K, N));
  } else if (!trans_a && trans_b) {
    run(ConstMapMat<T>(a, M, K), ConstMapMat<T>(b, N, K).transpose());
  } else if (trans_a && !trans_b) {
    run(ConstMapMat<T>(a, K, M).transpose(), ConstMapMat<T>(b, K, N));
  } else {
    run(ConstMapMat<T>(a, K, M).transpose(), ConstMapMat<T>(b, N, K).transpose());
  }
}

/// In-place numerically stable softmax over contiguous rows of length `width`.
template <typename T>
void softmax_rows(T* x, std::size_t rows, std::size_t width) {
  for (std::size_t r = 0; r < rows; ++r) {
    T* row = x + r * width;
    T m = row[0];
    for (std::size_t j = 1; j < width; ++j) m = row[j] > m ? row[j] : m;
    T s = 0;
    for (std::size_t j = 0; j < width; ++j) {
      row[j] = std::exp(row[j] - m);
      s += row[j];
    }
    const T inv = T(1) / s;
    for (std::size_t j = 0; j < width; ++j) row[j] *= inv;
  }
}

}  // namespace linflow::kernels

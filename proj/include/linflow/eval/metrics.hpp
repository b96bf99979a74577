#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "linflow/core/dense_array.hpp"

namespace linflow::eval {

/// Sliced Wasserstein-2 between two sample sets [N, ...] and [M, ...] (each
/// sample flattened): sqrt of the mean over random unit directions of the
/// exact 1D W2², computed by sorting. Unequal counts are matched through
/// their empirical quantile functions.
template <typename T>
double sliced_wasserstein2(const DenseArray<T>& a, const DenseArray<T>& b, std::size_t n_projections,
                           std::uint64_t seed) {
  if (a.rank() == 0 || b.rank() == 0 || a.dim(0) == 0 || b.dim(0) == 0) {
    throw std::invalid_argument("sliced_wasserstein2: empty sample set");
  }
  if (n_projections == 0) throw std::invalid_argument("sliced_wasserstein2: need at least one projection");
  const std::size_t na = a.dim(0), nb = b.dim(0);
  const std::size_t dim = a.numel() / na;
  if (b.numel() / nb != dim) throw ShapeError("sliced_wasserstein2: dimensionality differs");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<double> dir(dim), pa(na), pb(nb);
  auto project = [&](const DenseArray<T>& s, std::vector<double>& out) {
    for (std::size_t i = 0; i < out.size(); ++i) {
      double acc = 0.0;
      for (std::size_t k = 0; k < dim; ++k) acc += dir[k] * static_cast<double>(s[i * dim + k]);
      out[i] = acc;
    }
    std::sort(out.begin(), out.end());
  };

  double total = 0.0;
  for (std::size_t p = 0; p < n_projections; ++p) {
    double norm = 0.0;
    do {
      for (auto& v : dir) v = normal(rng);
      norm = 0.0;
      for (double v : dir) norm += v * v;
    } while (norm == 0.0);
    for (auto& v : dir) v /= std::sqrt(norm);
    project(a, pa);
    project(b, pb);
    // Integrate (F_a^{-1}(q) − F_b^{-1}(q))² over the merged quantile breakpoints.
    double w2 = 0.0, q = 0.0;
    std::size_t i = 0, j = 0;
    while (i < na && j < nb) {
      const double qa = static_cast<double>(i + 1) / static_cast<double>(na);
      const double qb = static_cast<double>(j + 1) / static_cast<double>(nb);
      const double next = std::min(qa, qb);
      const double d = pa[i] - pb[j];
      w2 += (next - q) * d * d;
      q = next;
      if (qa <= next) ++i;
      if (qb <= next) ++j;
    }
    total += w2;
  }
  return std::sqrt(total / static_cast<double>(n_projections));
}

}  // namespace linflow::eval

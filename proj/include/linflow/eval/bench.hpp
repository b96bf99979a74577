#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "linflow/attention/attention.hpp"

namespace linflow::eval {

struct KernelTiming {
  std::size_t n = 0;
  double median_seconds = 0.0;
};

struct KernelScaling {
  std::string name;
  std::vector<KernelTiming> timings;
  double slope = 0.0;  ///< least-squares slope of log time against log n
  bool resolution_warning = false;  ///< some median was too short to time reliably
};

struct ScalingReport {
  std::size_t d = 0;
  std::size_t repeats = 0;
  double oracle_error = 0.0;  ///< worst kernel-vs-oracle deviation from the correctness gate
  KernelScaling linear;
  KernelScaling softmax;
};

/// Least-squares slope of log(y) against log(x).
inline double log_log_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("log_log_slope: need at least two points");
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(x.size());
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

namespace detail {

template <typename Fn>
double median_seconds(Fn&& fn, std::size_t repeats) {
  fn();  // warmup, excluded
  std::vector<double> times;
  for (std::size_t i = 0; i < repeats; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  std::nth_element(times.begin(), times.begin() + times.size() / 2, times.end());
  return times[times.size() / 2];
}

/// Softmax attention by direct per-row evaluation, in double.
inline DenseArray<double> naive_softmax_attention(const DenseArray<double>& q, const DenseArray<double>& k,
                                                  const DenseArray<double>& v, double divisor) {
  const std::size_t n = q.dim(0), d = q.dim(1), dv = v.dim(1);
  DenseArray<double> out({n, dv});
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0;
      for (std::size_t f = 0; f < d; ++f) acc += q(i, f) * k(j, f);
      s[j] = acc / divisor;
      mx = std::max(mx, s[j]);
    }
    double z = 0;
    for (auto& e : s) z += (e = std::exp(e - mx));
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t c = 0; c < dv; ++c) out(i, c) += s[j] / z * v(j, c);
  }
  return out;
}

}  // namespace detail

/// Times the single-branch kernels a finalized model runs. Both kernels must
/// first agree with their oracles at a small size (throws otherwise).
inline ScalingReport bench_attention(const std::vector<std::size_t>& n_list, std::size_t d, std::size_t repeats,
                                     std::uint64_t seed = 0, double min_resolved_seconds = 1e-4) {
  if (n_list.size() < 2) throw std::invalid_argument("bench_attention: need at least two sizes");
  if (!std::is_sorted(n_list.begin(), n_list.end())) throw std::invalid_argument("bench_attention: n_list must ascend");
  if (repeats == 0) throw std::invalid_argument("bench_attention: repeats must be positive");
  std::mt19937_64 rng(seed);
  const float wscale = 1.0f / std::sqrt(static_cast<float>(d));
  const auto hq = DenseArray<float>::randn({d, d / 2}, rng, wscale);
  const auto hk = DenseArray<float>::randn({d, d / 2}, rng, wscale);

  ScalingReport report;
  report.d = d;
  report.repeats = repeats;
  {
    const std::size_t n = 96;
    const auto q = DenseArray<float>::randn({n, d}, rng), k = DenseArray<float>::randn({n, d}, rng),
               v = DenseArray<float>::randn({n, d}, rng);
    const double lin_err = max_abs_diff(attention::linear_attention(q, k, v, hq, hk),
                                        attention::kernel_quadratic_attention(q, k, v, hq, hk));
    const auto soft = attention::softmax_attention(q, k, v).cast<double>();
    const double soft_err = max_abs_diff(
        soft, detail::naive_softmax_attention(q.cast<double>(), k.cast<double>(), v.cast<double>(),
                                              std::sqrt(static_cast<double>(d))));
    report.oracle_error = std::max(lin_err, soft_err);
    if (!(report.oracle_error < 1e-4)) {
      throw std::runtime_error("bench_attention: kernels disagree with their oracles (" +
                               std::to_string(report.oracle_error) + "); refusing to time");
    }
  }

  report.linear.name = "linear";
  report.softmax.name = "softmax";
  std::vector<double> ns, lin_t, soft_t;
  for (std::size_t n : n_list) {
    const auto q = DenseArray<float>::randn({n, d}, rng), k = DenseArray<float>::randn({n, d}, rng),
               v = DenseArray<float>::randn({n, d}, rng);
    const double tl = detail::median_seconds([&] { (void)attention::linear_attention(q, k, v, hq, hk); }, repeats);
    const double ts = detail::median_seconds([&] { (void)attention::softmax_attention(q, k, v); }, repeats);
    report.linear.timings.push_back({n, tl});
    report.softmax.timings.push_back({n, ts});
    report.linear.resolution_warning |= tl < min_resolved_seconds;
    report.softmax.resolution_warning |= ts < min_resolved_seconds;
    ns.push_back(static_cast<double>(n));
    lin_t.push_back(tl);
    soft_t.push_back(ts);
  }
  report.linear.slope = log_log_slope(ns, lin_t);
  report.softmax.slope = log_log_slope(ns, soft_t);
  return report;
}

}  // namespace linflow::eval

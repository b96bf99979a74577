#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "linflow/core/dense_array.hpp"

namespace linflow::data {

/// Mixture of isotropic Gaussians N(μ_c, σ²I) over samples of a fixed shape.
/// Under the rectified-flow path x_t = (1−t)x0 + tε each component stays
/// Gaussian, N((1−t)μ_c, ((1−t)²σ² + t²)I), so velocity and score are exact.
class IsotropicGaussianMixture {
 public:
  IsotropicGaussianMixture(std::vector<DenseArray<double>> means, std::vector<double> weights,
                           double sigma)
      : means_(std::move(means)), weights_(std::move(weights)), sigma_(sigma) {
    if (means_.empty()) throw std::invalid_argument("mixture needs at least one component");
    if (weights_.size() != means_.size()) throw std::invalid_argument("one weight per component");
    if (!(sigma_ >= 0.0)) throw std::invalid_argument("sigma must be non-negative");
    double total = 0;
    for (const auto& m : means_) {
      if (m.shape() != means_.front().shape()) throw ShapeError("mixture means differ in shape");
    }
    for (double w : weights_) {
      if (!(w > 0.0)) throw std::invalid_argument("mixture weights must be positive");
      total += w;
    }
    for (double& w : weights_) w /= total;
  }

  const Shape& sample_shape() const noexcept { return means_.front().shape(); }
  std::size_t sample_numel() const noexcept { return means_.front().numel(); }
  std::size_t components() const noexcept { return means_.size(); }
  double sigma() const noexcept { return sigma_; }
  const DenseArray<double>& mean(std::size_t c) const { return means_.at(c); }
  double weight(std::size_t c) const { return weights_.at(c); }

  template <typename T, typename Rng>
  DenseArray<T> sample(std::size_t count, Rng& rng) const {
    Shape shape{count};
    shape.insert(shape.end(), sample_shape().begin(), sample_shape().end());
    DenseArray<T> out(shape);
    std::discrete_distribution<std::size_t> pick(weights_.begin(), weights_.end());
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t m = sample_numel();
    for (std::size_t b = 0; b < count; ++b) {
      const auto& mu = means_[pick(rng)];
      for (std::size_t i = 0; i < m; ++i) out[b * m + i] = static_cast<T>(mu[i] + sigma_ * normal(rng));
    }
    return out;
  }

  /// Posterior component probabilities p(c | x_t) for one flattened sample.
  std::vector<double> responsibilities(std::span<const double> x, double t) const {
    const double a = 1.0 - t;
    const double var = a * a * sigma_ * sigma_ + t * t;
    std::vector<double> logp(means_.size());
    for (std::size_t c = 0; c < means_.size(); ++c) {
      double d2 = 0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - a * means_[c][i];
        d2 += d * d;
      }
      logp[c] = std::log(weights_[c]) - d2 / (2.0 * var);
    }
    const double top = *std::max_element(logp.begin(), logp.end());
    double z = 0;
    for (double& l : logp) z += (l = std::exp(l - top));
    for (double& l : logp) l /= z;
    return logp;
  }

  /// Exact marginal velocity E[ε − x0 | x_t = x] for a batch [B, ...].
  template <typename T>
  DenseArray<T> velocity(const DenseArray<T>& x, std::span<const T> t) const {
    return per_sample(x, t, [&](std::span<const double> xs, double ti, std::span<T> out) {
      const double a = 1.0 - ti;
      const double var = a * a * sigma_ * sigma_ + ti * ti;
      const auto w = responsibilities(xs, ti);
      for (std::size_t i = 0; i < xs.size(); ++i) {
        double u = 0;
        for (std::size_t c = 0; c < w.size(); ++c) {
          const double r = xs[i] - a * means_[c][i];
          const double e_eps = ti / var * r;
          const double e_x0 = means_[c][i] + a * sigma_ * sigma_ / var * r;
          u += w[c] * (e_eps - e_x0);
        }
        out[i] = static_cast<T>(u);
      }
    });
  }

  /// Exact score ∇ log p_t(x) for a batch [B, ...].
  template <typename T>
  DenseArray<T> score(const DenseArray<T>& x, std::span<const T> t) const {
    return per_sample(x, t, [&](std::span<const double> xs, double ti, std::span<T> out) {
      const double a = 1.0 - ti;
      const double var = a * a * sigma_ * sigma_ + ti * ti;
      const auto w = responsibilities(xs, ti);
      for (std::size_t i = 0; i < xs.size(); ++i) {
        double s = 0;
        for (std::size_t c = 0; c < w.size(); ++c) s -= w[c] * (xs[i] - a * means_[c][i]) / var;
        out[i] = static_cast<T>(s);
      }
    });
  }

  /// Velocity-field adaptor so the mixture can stand in for a trained model.
  template <typename T>
  DenseArray<T> operator()(const DenseArray<T>& x, std::span<const T> t) const {
    return velocity(x, t);
  }

 private:
  template <typename T, typename Fn>
  DenseArray<T> per_sample(const DenseArray<T>& x, std::span<const T> t, Fn&& fn) const {
    const std::size_t m = sample_numel();
    if (x.rank() < 1 || x.dim(0) != t.size() || x.numel() != t.size() * m) {
      throw ShapeError("mixture: batch " + shape_str(x.shape()) + " does not match " +
                       std::to_string(t.size()) + " samples of " + shape_str(sample_shape()));
    }
    DenseArray<T> out(x.shape());
    std::vector<double> xs(m);
    for (std::size_t b = 0; b < t.size(); ++b) {
      for (std::size_t i = 0; i < m; ++i) xs[i] = static_cast<double>(x[b * m + i]);
      fn(std::span<const double>(xs), static_cast<double>(t[b]),
         std::span<T>(out.data() + b * m, m));
    }
    return out;
  }

  std::vector<DenseArray<double>> means_;
  std::vector<double> weights_;
  double sigma_;
};

/// Sequence toy: each sample is `seq_len` 2D points tracing (s, ±amplitude·sin(πs))
/// for s evenly spaced in [−1, 1], one component per sign, plus N(0, σ²) jitter.
inline IsotropicGaussianMixture sinusoid_mixture(std::size_t seq_len = 16, double sigma = 0.1,
                                                 double amplitude = 1.0) {
  if (seq_len < 2) throw std::invalid_argument("sinusoid_mixture: seq_len must be >= 2");
  std::vector<DenseArray<double>> means;
  for (double sign : {1.0, -1.0}) {
    DenseArray<double> mu({seq_len, 2});
    for (std::size_t i = 0; i < seq_len; ++i) {
      const double s = -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(seq_len - 1);
      mu(i, 0) = s;
      mu(i, 1) = sign * amplitude * std::sin(std::numbers::pi * s);
    }
    means.push_back(std::move(mu));
  }
  return IsotropicGaussianMixture(std::move(means), {0.5, 0.5}, sigma);
}

/// Two well-separated blobs in the plane, sample shape [1, 2].
inline IsotropicGaussianMixture planar_mixture(double separation = 1.0, double sigma = 0.3) {
  std::vector<DenseArray<double>> means;
  for (double sign : {1.0, -1.0}) {
    means.push_back(DenseArray<double>({1, 2}, std::vector<double>{sign * separation, 0.0}));
  }
  return IsotropicGaussianMixture(std::move(means), {0.5, 0.5}, sigma);
}

}  // namespace linflow::data

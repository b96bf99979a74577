#pragma once

#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "linflow/attention/attention_ops.hpp"
#include "linflow/core/dense_array.hpp"
#include "linflow/grad/ops.hpp"

namespace linflow::model {

/// What a transformer block's attention computes.
enum class LayerKind : std::uint8_t {
  kMixed = 0,      ///< r-gated blend of both branches; r is a parameter
  kQuadratic = 1,  ///< finalized to softmax attention only
  kLinear = 2,     ///< finalized to Hedgehog linear attention only
};

struct ModelConfig {
  std::size_t n_layers = 8;
  std::size_t d_model = 32;
  std::size_t seq_len = 16;
  std::size_t d_state = 2;
  std::size_t mlp_ratio = 4;

  void validate() const {
    if (n_layers == 0 || seq_len == 0 || d_state == 0 || mlp_ratio == 0) {
      throw std::invalid_argument("ModelConfig: extents must be positive");
    }
    if (d_model < 2 || d_model % 2 != 0) throw std::invalid_argument("ModelConfig: d_model must be even");
  }
  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct Parameter {
  std::string name;
  DenseArray<T> value;
  bool decay = true;          ///< subject to weight decay
  bool unit_interval = false; ///< projected back into [0,1] after updates
  bool trainable = true;
};

/// Small pre-norm transformer predicting rectified-flow velocity for
/// [B, seq_len, d_state] inputs. Every attention block owns a selection score
/// r (initialized to 1, i.e. pure softmax attention) until it is finalized.
template <typename T>
class ToyTransformer {
 public:
  using value_type = T;

  /// Tape handles for every parameter, aligned with parameters().
  struct Bound {
    std::vector<Var<T>> vars;
  };

  ToyTransformer() = default;

  template <typename Rng>
  ToyTransformer(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t D = cfg_.d_model, H = cfg_.mlp_ratio * D;
    const T s_in = T(1) / std::sqrt(static_cast<T>(cfg_.d_state));
    const T s_d = T(1) / std::sqrt(static_cast<T>(D));
    const T s_h = T(1) / std::sqrt(static_cast<T>(H));
    add("embed.w", DenseArray<T>::randn({cfg_.d_state, D}, rng, s_in));
    add("embed.b", DenseArray<T>({D}), false);
    add("pos", DenseArray<T>::randn({cfg_.seq_len, D}, rng, T(0.1)), false);
    add("time.w1", DenseArray<T>::randn({D, D}, rng, s_d));
    add("time.b1", DenseArray<T>({D}), false);
    add("time.w2", DenseArray<T>::randn({D, D}, rng, s_d));
    add("time.b2", DenseArray<T>({D}), false);
    kinds_.assign(cfg_.n_layers, LayerKind::kMixed);
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
      const std::string p = layer_prefix(l);
      add(p + "norm1", DenseArray<T>({D}, T(1)), false);
      add(p + "wq", DenseArray<T>::randn({D, D}, rng, s_d));
      add(p + "wk", DenseArray<T>::randn({D, D}, rng, s_d));
      add(p + "wv", DenseArray<T>::randn({D, D}, rng, s_d));
      add(p + "wo", DenseArray<T>::randn({D, D}, rng, s_d));
      add(p + "hq", hedgehog_init(D, rng));
      add(p + "hk", hedgehog_init(D, rng));
      add(p + "norm2", DenseArray<T>({D}, T(1)), false);
      add(p + "mlp.w1", DenseArray<T>::randn({D, H}, rng, s_d));
      add(p + "mlp.b1", DenseArray<T>({H}), false);
      add(p + "mlp.w2", DenseArray<T>::randn({H, D}, rng, s_h));
      add(p + "mlp.b2", DenseArray<T>({D}), false);
      add(p + "r", DenseArray<T>({1}, T(1)), false, true);
    }
    add("final_norm", DenseArray<T>({D}, T(1)), false);
    add("head.w", DenseArray<T>::randn({D, cfg_.d_state}, rng, s_d));
    add("head.b", DenseArray<T>({cfg_.d_state}), false);
  }

  /// Orthonormal columns of a Gaussian d×(d/2) matrix, scaled by 1/sqrt(d).
  template <typename Rng>
  static DenseArray<T> hedgehog_init(std::size_t d, Rng& rng) {
    const std::size_t h = d / 2;
    const DenseArray<double> g = DenseArray<double>::randn({d, h}, rng);
    Eigen::MatrixXd m(d, h);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < h; ++j) m(i, j) = g(i, j);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
    const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(d, h);
    DenseArray<T> out({d, h});
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < h; ++j) out(i, j) = static_cast<T>(q(i, j) * scale);
    return out;
  }

  /// Fresh Hedgehog matrices for every layer that still has a linear branch.
  template <typename Rng>
  void reinit_hedgehog(Rng& rng) {
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
      if (kinds_[l] == LayerKind::kQuadratic) continue;
      param(layer_prefix(l) + "hq").value = hedgehog_init(cfg_.d_model, rng);
      param(layer_prefix(l) + "hk").value = hedgehog_init(cfg_.d_model, rng);
    }
  }

  const ModelConfig& config() const noexcept { return cfg_; }
  const std::vector<LayerKind>& layer_kinds() const noexcept { return kinds_; }
  std::vector<Parameter<T>>& parameters() noexcept { return params_; }
  const std::vector<Parameter<T>>& parameters() const noexcept { return params_; }

  bool has_param(const std::string& name) const { return index_.count(name) != 0; }
  Parameter<T>& param(const std::string& name) { return params_.at(index_of(name)); }
  const Parameter<T>& param(const std::string& name) const { return params_.at(index_of(name)); }
  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("ToyTransformer: no parameter " + name);
    return it->second;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
  }

  /// Effective selection score per layer: r for mixed layers, 1/0 for
  /// finalized quadratic/linear layers.
  std::vector<T> scores() const {
    std::vector<T> r(cfg_.n_layers);
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
      switch (kinds_[l]) {
        case LayerKind::kMixed: r[l] = param(layer_prefix(l) + "r").value[0]; break;
        case LayerKind::kQuadratic: r[l] = T(1); break;
        case LayerKind::kLinear: r[l] = T(0); break;
      }
    }
    return r;
  }
  void set_score(std::size_t layer, T r) {
    if (kinds_.at(layer) != LayerKind::kMixed) throw std::logic_error("set_score: layer is finalized");
    param(layer_prefix(layer) + "r").value[0] = r;
  }
  /// Parameter indices of the r scores of mixed layers, in layer order.
  std::vector<std::size_t> score_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
      if (kinds_[l] == LayerKind::kMixed) out.push_back(index_of(layer_prefix(l) + "r"));
    }
    return out;
  }
  void set_scores_trainable(bool trainable) {
    for (std::size_t i : score_indices()) params_[i].trainable = trainable;
  }

  /// Deep copy whose parameters never request gradients.
  ToyTransformer snapshot() const {
    ToyTransformer copy = *this;
    copy.frozen_ = true;
    return copy;
  }
  /// Overwrites parameter values (and layer layout) with those of `snap`.
  void restore(const ToyTransformer& snap) {
    const bool frozen = frozen_;
    *this = snap;
    frozen_ = frozen;
  }
  /// Same model at another scalar precision.
  template <typename U>
  ToyTransformer<U> cast() const {
    ToyTransformer<U> out = ToyTransformer<U>::from_layout(cfg_, kinds_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& dst = out.parameters()[i];
      dst.value = params_[i].value.template cast<U>();
      dst.trainable = params_[i].trainable;
    }
    out.set_frozen(frozen_);
    return out;
  }

  bool frozen() const noexcept { return frozen_; }
  void set_frozen(bool f) noexcept { frozen_ = f; }

  /// Replaces every mixed layer by the branch round(r) selects (ties keep
  /// softmax) and drops the parameters the kept branch does not use.
  void finalize_layers() {
    std::vector<Parameter<T>> kept;
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
      if (kinds_[l] != LayerKind::kMixed) continue;
      const T r = std::clamp(param(layer_prefix(l) + "r").value[0], T(0), T(1));
      kinds_[l] = std::floor(r + T(0.5)) >= T(1) ? LayerKind::kQuadratic : LayerKind::kLinear;
    }
    for (auto& p : params_) {
      if (keeps(p.name)) kept.push_back(std::move(p));
    }
    params_ = std::move(kept);
    reindex();
  }

  /// Leaf handles for all parameters. Trainable parameters of a non-frozen
  /// model request gradients when `with_grad` is set.
  Bound bind(Tape<T>& tape, bool with_grad = true) const {
    Bound b;
    b.vars.reserve(params_.size());
    for (const auto& p : params_) b.vars.push_back(tape.leaf(p.value, with_grad && !frozen_ && p.trainable));
    return b;
  }

  /// Velocity for x = [B, seq_len, d_state] at one time per sample.
  Var<T> forward(const Bound& b, Var<T> x, std::span<const T> t) const {
    Tape<T>& tape = x.tape();
    const auto& xs = x.value().shape();
    if (xs.size() != 3 || xs[1] != cfg_.seq_len || xs[2] != cfg_.d_state) {
      throw ShapeError("ToyTransformer: input " + shape_str(xs) + ", expected [B," +
                       std::to_string(cfg_.seq_len) + "," + std::to_string(cfg_.d_state) + "]");
    }
    if (t.size() != xs[0]) throw ShapeError("ToyTransformer: one time per sample required");
    if (b.vars.size() != params_.size()) throw std::logic_error("ToyTransformer: stale binding");
    auto P = [&](const std::string& name) { return b.vars[index_of(name)]; };

    Var<T> h = matmul(x, P("embed.w")) + P("embed.b") + P("pos");
    Var<T> temb = tape.constant(time_features(t));
    temb = matmul(silu(matmul(temb, P("time.w1")) + P("time.b1")), P("time.w2")) + P("time.b2");
    h = h + repeat_tokens(temb, cfg_.seq_len);

    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
      const std::string p = layer_prefix(l);
      Var<T> a = rms_norm(h, P(p + "norm1"));
      Var<T> q = matmul(a, P(p + "wq"));
      Var<T> k = matmul(a, P(p + "wk"));
      Var<T> v = matmul(a, P(p + "wv"));
      Var<T> att;
      switch (kinds_[l]) {
        case LayerKind::kMixed:
          att = attention::mixed_attention(q, k, v, P(p + "hq"), P(p + "hk"), P(p + "r"));
          break;
        case LayerKind::kQuadratic:
          att = attention::softmax_attention(q, k, v, attention::SimilarityScale::kD);
          break;
        case LayerKind::kLinear:
          att = attention::linear_attention(q, k, v, P(p + "hq"), P(p + "hk"));
          break;
      }
      h = h + matmul(att, P(p + "wo"));
      Var<T> m = rms_norm(h, P(p + "norm2"));
      m = matmul(silu(matmul(m, P(p + "mlp.w1")) + P(p + "mlp.b1")), P(p + "mlp.w2")) + P(p + "mlp.b2");
      h = h + m;
    }
    h = rms_norm(h, P("final_norm"));
    return matmul(h, P("head.w")) + P("head.b");
  }

  /// Gradient-free evaluation; satisfies the flow VelocityField interface.
  DenseArray<T> operator()(const DenseArray<T>& x, std::span<const T> t) const {
    Tape<T> tape;
    const Bound b = bind(tape, false);
    return forward(b, tape.constant(x), t).value();
  }

  /// Sinusoidal features [B, d_model]: sin and cos of 2π·f·t for d_model/2
  /// frequencies f spaced geometrically over [1, d_model/2].
  DenseArray<T> time_features(std::span<const T> t) const {
    const std::size_t half = cfg_.d_model / 2;
    DenseArray<T> out({t.size(), cfg_.d_model});
    for (std::size_t b = 0; b < t.size(); ++b) {
      for (std::size_t k = 0; k < half; ++k) {
        const double f = half > 1 ? std::pow(static_cast<double>(half), static_cast<double>(k) / (half - 1)) : 1.0;
        const double ang = 2.0 * std::numbers::pi * f * static_cast<double>(t[b]);
        out(b, k) = static_cast<T>(std::sin(ang));
        out(b, half + k) = static_cast<T>(std::cos(ang));
      }
    }
    return out;
  }

  static std::string layer_prefix(std::size_t l) { return "layers." + std::to_string(l) + "."; }

  /// Rebuilds a model from a stored layout; used by the checkpoint reader.
  static ToyTransformer from_layout(const ModelConfig& cfg, std::vector<LayerKind> kinds) {
    cfg.validate();
    if (kinds.size() != cfg.n_layers) throw std::invalid_argument("layer kind count mismatch");
    std::mt19937_64 rng(0);
    ToyTransformer m(cfg, rng);
    m.kinds_ = std::move(kinds);
    std::vector<Parameter<T>> kept;
    for (auto& p : m.params_) {
      if (m.keeps(p.name)) kept.push_back(std::move(p));
    }
    m.params_ = std::move(kept);
    m.reindex();
    return m;
  }

 private:
  void add(std::string name, DenseArray<T> value, bool decay = true, bool unit_interval = false) {
    index_[name] = params_.size();
    params_.push_back(Parameter<T>{std::move(name), std::move(value), decay, unit_interval, true});
  }
  void reindex() {
    index_.clear();
    for (std::size_t i = 0; i < params_.size(); ++i) index_[params_[i].name] = i;
  }
  /// Whether a parameter survives under the current layer kinds.
  bool keeps(const std::string& name) const {
    if (name.rfind("layers.", 0) != 0) return true;
    const std::size_t dot = name.find('.', 7);
    const std::size_t l = std::stoul(name.substr(7, dot - 7));
    const std::string leaf = name.substr(dot + 1);
    switch (kinds_[l]) {
      case LayerKind::kMixed: return true;
      case LayerKind::kQuadratic: return leaf != "r" && leaf != "hq" && leaf != "hk";
      case LayerKind::kLinear: return leaf != "r";
    }
    return true;
  }

  /// [B, D] -> [B, n, D] by copying each row n times.
  static Var<T> repeat_tokens(Var<T> a, std::size_t n) {
    const auto& av = a.value();
    const std::size_t B = av.dim(0), D = av.dim(1);
    DenseArray<T> out({B, n, D});
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < n; ++i)
        std::copy_n(av.data() + b * D, D, out.data() + (b * n + i) * D);
    return a.tape().record(
        "repeat_tokens", std::move(out), {a},
        [B, n, D](Tape<T>& tape, const typename Tape<T>::Node& node, const DenseArray<T>& g) {
          DenseArray<T> ga({B, D});
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < n; ++i)
              for (std::size_t j = 0; j < D; ++j) ga[b * D + j] += g[(b * n + i) * D + j];
          tape.accumulate(node.inputs[0], std::move(ga));
        });
  }

  ModelConfig cfg_;
  std::vector<Parameter<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<LayerKind> kinds_;
  bool frozen_ = false;
};

}  // namespace linflow::model

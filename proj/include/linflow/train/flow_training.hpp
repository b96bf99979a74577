#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "linflow/flow/flow.hpp"
#include "linflow/model/toy_transformer.hpp"
#include "linflow/train/optim.hpp"

namespace linflow::train {

struct FlowTrainConfig {
  std::size_t steps = 3000;
  std::size_t batch_size = 64;
  double lr = 2e-3;
  double warmup_fraction = 0.05;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
};

/// Fits a velocity model to `draw(batch, rng)` samples with the
/// flow-matching loss at t ~ U[0,1]. Returns the per-step loss.
template <typename Draw>
std::vector<double> train_flow_model(model::ToyTransformer<float>& net, Draw&& draw, const FlowTrainConfig& cfg) {
  if (net.frozen()) throw std::logic_error("train_flow_model: model is frozen");
  if (cfg.batch_size == 0) throw std::invalid_argument("train_flow_model: batch_size must be positive");
  // A plain flow model has no use for the selection scores.
  net.set_scores_trainable(false);
  AdamW<float> opt({.weight_decay = cfg.weight_decay});
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> losses;
  losses.reserve(cfg.steps);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    DenseArray<float> x0 = draw(cfg.batch_size, rng);
    const auto batch = flow::make_fm_batch(std::move(x0), rng, [&](auto& g) { return unit(g); });
    Tape<float> tape;
    const auto bound = net.bind(tape, true);
    auto model = [&](Tape<float>&, Var<float> x, std::span<const float> t) { return net.forward(bound, x, t); };
    Var<float> loss = flow::fm_loss(tape, model, batch);
    const double value = loss.value()[0];
    if (!std::isfinite(value)) throw NonFiniteError("train_flow_model: non-finite loss at step " + std::to_string(step));
    tape.backward(loss);
    opt.step(net, bound, tape, lr_at(step, cfg.steps, cfg.lr, cfg.warmup_fraction));
    losses.push_back(value);
  }
  net.set_scores_trainable(true);
  return losses;
}

}  // namespace linflow::train

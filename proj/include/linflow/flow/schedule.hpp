#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace linflow::flow {

/// Rectified-flow schedule: x_t = α_t·x0 + σ_t·ε with α_t = 1 − t, σ_t = t,
/// sampled on a descending grid from t = 1 (noise) to t = 0 (data).
struct FlowSchedule {
  std::vector<double> t_grid;
  double t_min_clamp = 0.02;

  static constexpr double alpha(double t) noexcept { return 1.0 - t; }
  static constexpr double sigma(double t) noexcept { return t; }
  static constexpr double alpha_dot() noexcept { return -1.0; }
  static constexpr double sigma_dot() noexcept { return 1.0; }

  /// `steps` uniform Euler steps: grid 1, 1 − 1/steps, ..., 0.
  static FlowSchedule uniform(std::size_t steps, double t_min_clamp = 0.02) {
    if (steps == 0) throw std::invalid_argument("FlowSchedule::uniform: steps must be >= 1");
    FlowSchedule s;
    s.t_min_clamp = t_min_clamp;
    s.t_grid.resize(steps + 1);
    for (std::size_t i = 0; i <= steps; ++i) {
      s.t_grid[i] = 1.0 - static_cast<double>(i) / static_cast<double>(steps);
    }
    s.t_grid.back() = 0.0;
    s.validate();
    return s;
  }

  std::size_t steps() const noexcept { return t_grid.empty() ? 0 : t_grid.size() - 1; }

  void validate() const {
    if (t_grid.size() < 2) throw std::invalid_argument("FlowSchedule: grid needs at least [1, 0]");
    if (t_grid.front() != 1.0 || t_grid.back() != 0.0) {
      throw std::invalid_argument("FlowSchedule: grid must start at 1 and end at 0");
    }
    for (std::size_t i = 1; i < t_grid.size(); ++i) {
      if (!(t_grid[i] < t_grid[i - 1])) {
        throw std::invalid_argument("FlowSchedule: grid must be strictly decreasing at index " +
                                    std::to_string(i));
      }
    }
    const double first_interior = t_grid.size() > 2 ? t_grid[1] : 1.0;
    if (!(t_min_clamp > 0.0) || !(t_min_clamp < first_interior)) {
      throw std::invalid_argument("FlowSchedule: t_min_clamp must lie in (0, first interior grid point)");
    }
  }
};

}  // namespace linflow::flow

#pragma once

#include <cstddef>
#include <vector>

#include "rdrl/mlp.hpp"

namespace rdrl::ad {

/// Constant or linearly decaying learning rate.
struct LrSchedule {
  double initial = 1e-3;
  double final = 1e-3;
  std::size_t decay_steps = 0;  // 0 => constant at `initial`

  static LrSchedule constant(double lr) { return {lr, lr, 0}; }
  static LrSchedule linear(double from, double to, std::size_t steps) { return {from, to, steps}; }

  /// Rate applied by the update that follows `step` completed updates.
  double at(std::size_t step) const;
};

struct AdamConfig {
  LrSchedule lr;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double max_grad_norm = 0.0;  // global-norm clipping; 0 disables
};

class AdamState {
 public:
  AdamState() = default;
  AdamState(const ParamSet& params, AdamConfig cfg);

  const AdamConfig& config() const { return cfg_; }
  std::size_t step() const { return step_; }
  double current_lr() const { return cfg_.lr.at(step_); }
  const std::vector<Matrix>& first_moment() const { return m_; }
  const std::vector<Matrix>& second_moment() const { return v_; }

  /// One bias-corrected Adam update of `params` in place.
  void apply(ParamSet& params, const std::vector<Matrix>& grads);

 private:
  AdamConfig cfg_;
  std::size_t step_ = 0;
  std::vector<Matrix> m_, v_;
};

inline void adam_step(AdamState& state, ParamSet& params, const std::vector<Matrix>& grads) {
  state.apply(params, grads);
}

/// Plain Adam on a single scalar (used for the log-temperature).
class ScalarAdam {
 public:
  explicit ScalarAdam(AdamConfig cfg = {}) : cfg_(cfg) {}
  double apply(double value, double grad);
  std::size_t step() const { return step_; }

 private:
  AdamConfig cfg_;
  std::size_t step_ = 0;
  double m_ = 0.0, v_ = 0.0;
};

}  // namespace rdrl::ad

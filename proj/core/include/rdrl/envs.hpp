#pragma once

// Classic-control stand-ins with physical-parameter multipliers.
// Step functions are pure: (state, params, action) determines the
// transition; randomness only enters through reset().

#include <array>
#include <cstddef>
#include <cstdint>
#include <string_view>

namespace rdrl::envs {

struct CartPoleParams {
  double cart_mass = 1.0;
  double pole_mass = 0.1;
  double pole_half_length = 0.5;
  double gravity = 9.8;
  double force_mag = 10.0;
  double dt = 0.02;
  double angle_limit = 0.2095;
  double x_limit = 2.4;
  std::size_t max_steps = 500;
  double relative_mass = 1.0;    // scales pole_mass
  double relative_length = 1.0;  // scales pole_half_length

  double effective_pole_mass() const { return pole_mass * relative_mass; }
  double effective_half_length() const { return pole_half_length * relative_length; }
  void validate() const;
};

struct PendulumParams {
  double mass = 1.0;
  double length = 1.0;
  double gravity = 10.0;
  double dt = 0.05;
  double torque_limit = 2.0;
  double speed_limit = 8.0;
  std::size_t max_steps = 200;
  double relative_mass = 1.0;  // scales mass

  double effective_mass() const { return mass * relative_mass; }
  void validate() const;
};

struct CartPoleState {
  double x = 0.0, x_dot = 0.0, theta = 0.0, theta_dot = 0.0;
  std::size_t steps = 0;
};

struct PendulumState {
  double theta = 0.0, theta_dot = 0.0;
  std::size_t steps = 0;
};

template <class State>
struct StepResult {
  State next;
  double reward = 0.0;
  bool done = false;
  /// Episode ended only because the step budget ran out.
  bool truncated = false;
};

inline constexpr std::size_t kCartPoleObsDim = 4;
inline constexpr std::size_t kCartPoleActions = 2;
inline constexpr std::size_t kPendulumObsDim = 3;
inline constexpr std::size_t kPendulumActionDim = 1;

/// Each component uniform in [-0.05, 0.05].
CartPoleState reset(const CartPoleParams& params, std::uint64_t seed);
/// theta uniform in [-pi, pi], theta_dot uniform in [-1, 1].
PendulumState reset(const PendulumParams& params, std::uint64_t seed);

/// action 0 pushes left, 1 pushes right. Reward 1 per step; done when
/// |theta| >= angle_limit, |x| >= x_limit or the step budget is spent.
StepResult<CartPoleState> step_cartpole(const CartPoleState& state, const CartPoleParams& params,
                                        int action);

/// Torque is clipped to the limit before integration. Reward is computed
/// on the pre-step state and the clipped torque.
StepResult<PendulumState> step_pendulum(const PendulumState& state, const PendulumParams& params,
                                        double torque);

/// Maps theta into [-pi, pi).
double wrap_angle(double theta);

std::array<double, kCartPoleObsDim> observe(const CartPoleState& s);
/// (cos theta, sin theta, theta_dot).
std::array<double, kPendulumObsDim> observe(const PendulumState& s);

/// Sets "relative_mass" or "relative_length" (cart-pole only).
/// Throws InvalidArgument for unknown names or non-positive values.
CartPoleParams apply_perturbation(CartPoleParams params, std::string_view name, double value);
PendulumParams apply_perturbation(PendulumParams params, std::string_view name, double value);

}  // namespace rdrl::envs

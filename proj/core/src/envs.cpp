#include "rdrl/envs.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "rdrl/errors.hpp"

namespace rdrl::envs {

namespace {

void positive(double v, const char* what) {
  if (!(v > 0.0) || !std::isfinite(v)) throw InvalidArgument(std::string(what) + " must be positive");
}

}  // namespace

void CartPoleParams::validate() const {
  positive(cart_mass, "cart_mass");
  positive(pole_mass, "pole_mass");
  positive(pole_half_length, "pole_half_length");
  positive(dt, "dt");
  positive(relative_mass, "relative_mass");
  positive(relative_length, "relative_length");
  positive(angle_limit, "angle_limit");
  positive(x_limit, "x_limit");
  if (max_steps == 0) throw InvalidArgument("max_steps must be >= 1");
}

void PendulumParams::validate() const {
  positive(mass, "mass");
  positive(length, "length");
  positive(dt, "dt");
  positive(torque_limit, "torque_limit");
  positive(speed_limit, "speed_limit");
  positive(relative_mass, "relative_mass");
  if (max_steps == 0) throw InvalidArgument("max_steps must be >= 1");
}

CartPoleState reset(const CartPoleParams& params, std::uint64_t seed) {
  params.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.05, 0.05);
  CartPoleState s;
  s.x = u(rng);
  s.x_dot = u(rng);
  s.theta = u(rng);
  s.theta_dot = u(rng);
  return s;
}

PendulumState reset(const PendulumParams& params, std::uint64_t seed) {
  params.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
  std::uniform_real_distribution<double> speed(-1.0, 1.0);
  PendulumState s;
  s.theta = angle(rng);
  s.theta_dot = speed(rng);
  return s;
}

StepResult<CartPoleState> step_cartpole(const CartPoleState& s, const CartPoleParams& p, int action) {
  if (action != 0 && action != 1) throw InvalidArgument("cart-pole action must be 0 or 1");
  if (!std::isfinite(s.x) || !std::isfinite(s.x_dot) || !std::isfinite(s.theta) ||
      !std::isfinite(s.theta_dot)) {
    throw NumericFault("cart-pole state is not finite");
  }
  const double force = action == 1 ? p.force_mag : -p.force_mag;
  const double mp = p.effective_pole_mass();
  const double l = p.effective_half_length();
  const double total = p.cart_mass + mp;
  const double sin_t = std::sin(s.theta), cos_t = std::cos(s.theta);

  const double theta_acc =
      (p.gravity * sin_t + cos_t * (-force - mp * l * s.theta_dot * s.theta_dot * sin_t) / total) /
      (l * (4.0 / 3.0 - mp * cos_t * cos_t / total));
  const double x_acc =
      (force + mp * l * (s.theta_dot * s.theta_dot * sin_t - theta_acc * cos_t)) / total;

  StepResult<CartPoleState> r;
  r.next.x = s.x + p.dt * s.x_dot;
  r.next.x_dot = s.x_dot + p.dt * x_acc;
  r.next.theta = s.theta + p.dt * s.theta_dot;
  r.next.theta_dot = s.theta_dot + p.dt * theta_acc;
  r.next.steps = s.steps + 1;
  if (!std::isfinite(r.next.x_dot) || !std::isfinite(r.next.theta_dot)) {
    throw NumericFault("cart-pole dynamics produced a non-finite state");
  }

  const bool failed = std::abs(r.next.theta) >= p.angle_limit || std::abs(r.next.x) >= p.x_limit;
  r.reward = 1.0;
  r.done = failed || r.next.steps >= p.max_steps;
  r.truncated = !failed && r.done;
  return r;
}

double wrap_angle(double theta) {
  const double two_pi = 2.0 * std::numbers::pi;
  double w = std::fmod(theta + std::numbers::pi, two_pi);
  if (w < 0.0) w += two_pi;
  return w - std::numbers::pi;
}

StepResult<PendulumState> step_pendulum(const PendulumState& s, const PendulumParams& p, double torque) {
  if (!std::isfinite(s.theta) || !std::isfinite(s.theta_dot) || std::isnan(torque)) {
    throw NumericFault("pendulum state or torque is not finite");
  }
  const double u = std::clamp(torque, -p.torque_limit, p.torque_limit);
  const double m = p.effective_mass();
  const double l = p.length;

  const double th = wrap_angle(s.theta);
  const double cost = th * th + 0.1 * s.theta_dot * s.theta_dot + 0.001 * u * u;
  const double theta_acc = 3.0 * p.gravity / (2.0 * l) * std::sin(s.theta) + 3.0 / (m * l * l) * u;

  StepResult<PendulumState> r;
  r.next.theta = s.theta + p.dt * s.theta_dot;
  r.next.theta_dot = std::clamp(s.theta_dot + p.dt * theta_acc, -p.speed_limit, p.speed_limit);
  r.next.steps = s.steps + 1;
  r.reward = -cost;
  r.done = r.next.steps >= p.max_steps;
  r.truncated = r.done;
  return r;
}

std::array<double, kCartPoleObsDim> observe(const CartPoleState& s) {
  return {s.x, s.x_dot, s.theta, s.theta_dot};
}

std::array<double, kPendulumObsDim> observe(const PendulumState& s) {
  return {std::cos(s.theta), std::sin(s.theta), s.theta_dot};
}

CartPoleParams apply_perturbation(CartPoleParams params, std::string_view name, double value) {
  positive(value, "perturbation value");
  if (name == "relative_mass") {
    params.relative_mass = value;
  } else if (name == "relative_length") {
    params.relative_length = value;
  } else {
    throw InvalidArgument("unknown cart-pole multiplier '" + std::string(name) + "'");
  }
  return params;
}

PendulumParams apply_perturbation(PendulumParams params, std::string_view name, double value) {
  positive(value, "perturbation value");
  if (name == "relative_mass") {
    params.relative_mass = value;
  } else {
    throw InvalidArgument("unknown pendulum multiplier '" + std::string(name) + "'");
  }
  return params;
}

}  // namespace rdrl::envs

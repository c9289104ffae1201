#pragma once

#include <cstddef>
#include <vector>

#include "rdrl/autodiff.hpp"
#include "rdrl/random.hpp"

namespace rdrl {

/// One environment step. Discrete actions are stored as their index.
struct Transition {
  std::vector<double> state;
  std::vector<double> action;
  double reward = 0.0;
  std::vector<double> next_state;
  bool done = false;  // true only for genuine terminations, not time limits
};

struct Batch {
  ad::Matrix states;       // n x obs_dim
  ad::Matrix actions;      // n x action_dim
  ad::Matrix rewards;      // n x 1
  ad::Matrix next_states;  // n x obs_dim
  ad::Matrix dones;        // n x 1, 1.0 for terminal transitions
  std::size_t size() const { return static_cast<std::size_t>(states.rows()); }
};

/// Fixed-capacity ring buffer with uniform sampling (with replacement).
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, std::size_t obs_dim, std::size_t action_dim);

  void push(const Transition& t);
  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t inserted() const { return inserted_; }
  Transition at(std::size_t i) const;

  Batch sample(std::size_t n, Rng& rng) const;

 private:
  std::size_t capacity_, obs_dim_, action_dim_;
  std::size_t size_ = 0, next_ = 0, inserted_ = 0;
  std::vector<double> states_, actions_, rewards_, next_states_, dones_;
};

}  // namespace rdrl

#include "rdrl/replay.hpp"

#include <algorithm>
#include <cmath>

#include "rdrl/errors.hpp"

namespace rdrl {

ReplayBuffer::ReplayBuffer(std::size_t capacity, std::size_t obs_dim, std::size_t action_dim)
    : capacity_(capacity), obs_dim_(obs_dim), action_dim_(action_dim) {
  if (capacity == 0 || obs_dim == 0 || action_dim == 0) {
    throw InvalidArgument("replay buffer: capacity and dimensions must be >= 1");
  }
}

void ReplayBuffer::push(const Transition& t) {
  if (t.state.size() != obs_dim_ || t.next_state.size() != obs_dim_ || t.action.size() != action_dim_) {
    throw InvalidArgument("replay buffer: transition shape mismatch");
  }
  auto finite = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  };
  if (!finite(t.state) || !finite(t.next_state) || !finite(t.action) || !std::isfinite(t.reward)) {
    throw NumericFault("replay buffer: non-finite transition");
  }
  // Storage grows on demand up to capacity.
  if (size_ < capacity_ && next_ == size_) {
    states_.insert(states_.end(), t.state.begin(), t.state.end());
    actions_.insert(actions_.end(), t.action.begin(), t.action.end());
    rewards_.push_back(t.reward);
    next_states_.insert(next_states_.end(), t.next_state.begin(), t.next_state.end());
    dones_.push_back(t.done ? 1.0 : 0.0);
  } else {
    std::copy(t.state.begin(), t.state.end(), states_.begin() + next_ * obs_dim_);
    std::copy(t.action.begin(), t.action.end(), actions_.begin() + next_ * action_dim_);
    rewards_[next_] = t.reward;
    std::copy(t.next_state.begin(), t.next_state.end(), next_states_.begin() + next_ * obs_dim_);
    dones_[next_] = t.done ? 1.0 : 0.0;
  }
  next_ = (next_ + 1) % capacity_;
  size_ = std::min(size_ + 1, capacity_);
  ++inserted_;
}

Transition ReplayBuffer::at(std::size_t i) const {
  if (i >= size_) throw InvalidArgument("replay buffer: index out of range");
  Transition t;
  t.state.assign(states_.begin() + i * obs_dim_, states_.begin() + (i + 1) * obs_dim_);
  t.action.assign(actions_.begin() + i * action_dim_, actions_.begin() + (i + 1) * action_dim_);
  t.reward = rewards_[i];
  t.next_state.assign(next_states_.begin() + i * obs_dim_, next_states_.begin() + (i + 1) * obs_dim_);
  t.done = dones_[i] != 0.0;
  return t;
}

Batch ReplayBuffer::sample(std::size_t n, Rng& rng) const {
  if (size_ == 0) throw InvalidArgument("replay buffer: cannot sample from an empty buffer");
  std::uniform_int_distribution<std::size_t> pick(0, size_ - 1);
  const auto rows = static_cast<Eigen::Index>(n);
  Batch b;
  b.states.resize(rows, static_cast<Eigen::Index>(obs_dim_));
  b.actions.resize(rows, static_cast<Eigen::Index>(action_dim_));
  b.rewards.resize(rows, 1);
  b.next_states.resize(rows, static_cast<Eigen::Index>(obs_dim_));
  b.dones.resize(rows, 1);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const std::size_t i = pick(rng);
    for (std::size_t c = 0; c < obs_dim_; ++c) {
      b.states(r, static_cast<Eigen::Index>(c)) = states_[i * obs_dim_ + c];
      b.next_states(r, static_cast<Eigen::Index>(c)) = next_states_[i * obs_dim_ + c];
    }
    for (std::size_t c = 0; c < action_dim_; ++c) {
      b.actions(r, static_cast<Eigen::Index>(c)) = actions_[i * action_dim_ + c];
    }
    b.rewards(r, 0) = rewards_[i];
    b.dones(r, 0) = dones_[i];
  }
  return b;
}

}  // namespace rdrl

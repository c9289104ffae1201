#pragma once

// Discrete-action QR-DQN with a std-penalised greedy step.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "rdrl/adam.hpp"
#include "rdrl/checkpoint.hpp"
#include "rdrl/envs.hpp"
#include "rdrl/mlp.hpp"
#include "rdrl/quantile.hpp"
#include "rdrl/random.hpp"
#include "rdrl/replay.hpp"

namespace rdrl::qrdqn {

struct QrdqnConfig {
  std::size_t n_quantiles = 10;
  double alpha = 0.0;
  quantile::StdNormalization std_normalization = quantile::StdNormalization::MeanSquare;
  double kappa = 1.0;
  double lr = 2.3e-3;
  std::size_t batch = 64;
  double gamma = 0.99;
  std::size_t target_update_interval = 10;  // env steps between hard copies
  double target_polyak = 1.0;               // 1 => hard copy
  std::size_t buffer_capacity = 100000;
  double epsilon_initial = 1.0;
  double epsilon_final = 0.05;
  double exploration_fraction = 0.2;
  bool penalize_train = true;
  bool penalize_test = true;
  // Updates come in bursts: every train_freq env steps, gradient_steps Adam
  // steps. One update per env step with a 10-step hard sync diverges here.
  std::size_t gradient_steps = 128;
  std::size_t train_freq = 256;
  std::size_t learning_starts = 1000;
  double max_grad_norm = 10.0;
  std::vector<std::size_t> hidden = {256, 256};
  // Periodic greedy evaluation; when enabled, the best snapshot is returned.
  std::size_t eval_interval = 0;
  std::size_t eval_episodes = 10;

  void validate() const;
  double alpha_eff_train() const { return penalize_train ? alpha : 0.0; }
  double alpha_eff_test() const { return penalize_test ? alpha : 0.0; }
  quantile::PenaltyConfig penalty(double alpha_eff) const { return {alpha_eff, std_normalization}; }
  double epsilon_at(std::size_t step, std::size_t total_steps) const;
};

/// state -> |A| x M atoms, laid out action-major in one output row.
struct QNetwork {
  ad::MlpSpec spec;
  ad::ParamSet params;
  std::size_t n_actions = 0;
  std::size_t n_quantiles = 0;

  static QNetwork create(std::size_t obs_dim, std::size_t n_actions, const QrdqnConfig& cfg, Rng& rng);
  /// n x (|A| M) atoms for a batch of states.
  ad::Matrix atoms(const ad::Matrix& states) const;
};

/// argmax_a xi_alpha over one row of atoms; ties go to the lowest index.
std::size_t greedy_action(std::span<const double> atom_row, std::size_t n_actions,
                          const quantile::PenaltyConfig& penalty);

/// Epsilon-greedy over xi_alpha. Always consumes one uniform draw so that the
/// random stream does not depend on alpha.
std::size_t select_action(const QNetwork& net, std::span<const double> state, double alpha_eff,
                          double epsilon, Rng& rng,
                          quantile::StdNormalization norm = quantile::StdNormalization::MeanSquare);

/// n x M target atoms r + gamma (1 - done) theta(s', a*), a* greedy on the
/// target network under alpha_eff_train.
ad::Matrix compute_targets(const Batch& batch, const QNetwork& target, const QrdqnConfig& cfg);

/// One Adam step on a uniform batch. Empty when the buffer holds fewer than
/// `batch` transitions. Target synchronisation is left to the caller
/// (sync_target) since it is paced by environment steps.
std::optional<double> train_step(QNetwork& online, const QNetwork& target, const ReplayBuffer& buffer,
                                 const QrdqnConfig& cfg, ad::AdamState& optimizer, Rng& rng);

void sync_target(const QNetwork& online, QNetwork& target, const QrdqnConfig& cfg);

ad::AdamState make_optimizer(const QNetwork& net, const QrdqnConfig& cfg);

struct EpisodeLog {
  std::size_t step = 0;  // global env steps at episode end
  std::size_t episode = 0;
  double ret = 0.0;
  double loss = 0.0;  // mean over the episode's gradient steps; NaN if none
  double epsilon = 0.0;
  double alpha_eff_train = 0.0;
  double alpha_eff_test = 0.0;
};

struct TrainingHooks {
  /// Called after every environment step (and any updates it triggered).
  std::function<void(std::size_t step, const QNetwork& online, const QNetwork& target)> on_step;
};

struct TrainingResult {
  QNetwork network;
  std::vector<EpisodeLog> log;
  std::vector<double> losses;  // every gradient step, in order
};

TrainingResult run_training(const envs::CartPoleParams& env, const QrdqnConfig& cfg, std::uint64_t seed,
                            std::size_t total_steps, const TrainingHooks& hooks = {});

/// Greedy returns of `episodes` episodes; episode i resets with
/// derive_seed(seed, kEvaluation + i).
std::vector<double> evaluate(const QNetwork& net, const envs::CartPoleParams& env, double alpha_eff,
                             std::size_t episodes, std::uint64_t seed,
                             quantile::StdNormalization norm = quantile::StdNormalization::MeanSquare);

inline constexpr const char* kCheckpointBlock = "q_network";

CheckpointBlock to_block(const QNetwork& net);
/// Rebuilds a network of the given architecture; throws on hash or size mismatch.
QNetwork from_block(const CheckpointBlock& block, std::size_t obs_dim, std::size_t n_actions,
                    const QrdqnConfig& cfg);

}  // namespace rdrl::qrdqn

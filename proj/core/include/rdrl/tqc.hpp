#pragma once

// Truncated quantile critics with a std-penalised actor objective.

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

namespace rdrl::tqc {

struct TqcConfig {
  std::size_t n_critics = 5;
  std::size_t n_quantiles = 25;
  std::size_t drop_per_critic = 2;
  double alpha = 0.0;
  quantile::StdNormalization std_normalization = quantile::StdNormalization::MeanSquare;
  double kappa = 1.0;
  double gamma = 0.99;
  double beta = 0.005;
  std::size_t batch = 256;
  double lr_initial = 7.3e-4;
  double lr_final = 0.0;  // reached at the last training step
  std::optional<double> entropy_target;  // default: -(action dimension)
  std::size_t buffer_capacity = 1000000;
  std::vector<std::size_t> critic_hidden = {512, 512, 512};
  std::vector<std::size_t> actor_hidden = {256, 256};
  double eta_initial = 1.0;
  double log_std_min = -20.0;
  double log_std_max = 2.0;
  std::size_t learning_starts = 1000;  // uniform random actions before this
  std::size_t gradient_steps = 1;
  std::size_t train_freq = 1;

  /// Reduced critic width for single-core pendulum runs.
  static TqcConfig desk();

  void validate() const;
  std::size_t kept_per_critic() const { return n_quantiles - drop_per_critic; }
  std::size_t kept_total() const { return kept_per_critic() * n_critics; }
  double target_entropy(std::size_t action_dim) const {
    return entropy_target ? *entropy_target : -static_cast<double>(action_dim);
  }
  quantile::PenaltyConfig penalty() const { return {alpha, std_normalization}; }
};

/// state -> (mean, log_std) per action dimension; actions are
/// action_limit * tanh(u) with u ~ N(mean, exp(log_std)^2).
struct GaussianPolicy {
  ad::MlpSpec spec;
  ad::ParamSet params;
  std::size_t action_dim = 1;
  double action_limit = 1.0;
  double log_std_min = -20.0;
  double log_std_max = 2.0;

  static GaussianPolicy create(std::size_t obs_dim, std::size_t action_dim, double action_limit,
                               const TqcConfig& cfg, Rng& rng);
  /// limit * tanh(mean) for each row of states.
  ad::Matrix deterministic_action(const ad::Matrix& states) const;
};

struct CriticEnsemble {
  ad::MlpSpec spec;  // (state, action) -> M atoms
  std::vector<ad::ParamSet> online;
  std::vector<ad::ParamSet> target;

  static CriticEnsemble create(std::size_t obs_dim, std::size_t action_dim, const TqcConfig& cfg, Rng& rng);
  std::size_t size() const { return online.size(); }
  /// n x M atoms of one critic.
  ad::Matrix atoms(const std::vector<ad::ParamSet>& nets, std::size_t c, const ad::Matrix& states,
                   const ad::Matrix& actions) const;
};

struct SampledAction {
  ad::Matrix action;    // n x action_dim, inside the box
  ad::Matrix log_prob;  // n x 1, density of the emitted action
  ad::Matrix pre_squash;
};

/// Standard normal noise for a batch (row-major draw order).
ad::Matrix draw_noise(std::size_t rows, std::size_t cols, Rng& rng);

/// Reparameterised draw using explicit noise.
SampledAction sample_action(const GaussianPolicy& policy, const ad::Matrix& states, const ad::Matrix& noise);
SampledAction sample_action(const GaussianPolicy& policy, const ad::Matrix& states, Rng& rng);

/// Pools C lists of M atoms, sorts ascending and keeps the (M - d) C smallest.
std::vector<double> pool_and_truncate(const std::vector<std::vector<double>>& atoms_per_critic,
                                      std::size_t d);

/// n x kC targets r + gamma (1 - done) (z_i - eta log pi(a'|s')), a' drawn
/// from the policy at s'.
ad::Matrix compute_targets(const Batch& batch, const CriticEnsemble& critics, const GaussianPolicy& policy,
                           double eta, const TqcConfig& cfg, Rng& rng);
ad::Matrix compute_targets(const Batch& batch, const CriticEnsemble& critics, const GaussianPolicy& policy,
                           double eta, const TqcConfig& cfg, const ad::Matrix& noise);

struct CriticLoss {
  double value = 0.0;
  std::vector<std::vector<ad::Matrix>> grads;  // per online critic
};

/// Mean over critics of the batch quantile Huber loss against the shared targets.
CriticLoss critic_loss_grad(const CriticEnsemble& critics, const Batch& batch, const ad::Matrix& targets,
                            const TqcConfig& cfg);
double critic_loss(const CriticEnsemble& critics, const Batch& batch, const ad::Matrix& targets,
                   const TqcConfig& cfg);

struct ActorLoss {
  double value = 0.0;
  ad::Matrix log_prob;
  std::vector<ad::Matrix> grads;  // policy parameters only
};

/// mean(eta log pi(a|s) - (1/C) sum_c xi_alpha(theta_c(s, a))), a = f(s, noise),
/// using the untruncated atoms of the online critics.
ActorLoss actor_loss_grad(const GaussianPolicy& policy, const CriticEnsemble& critics,
                          const ad::Matrix& states, const ad::Matrix& noise, double eta, const TqcConfig& cfg);
double actor_loss(const GaussianPolicy& policy, const CriticEnsemble& critics, const Batch& batch, double eta,
                  const TqcConfig& cfg, Rng& rng);

/// Temperature optimised in log space.
struct Temperature {
  double log_eta = 0.0;
  ad::ScalarAdam optimizer;
  double eta() const;
};

Temperature make_temperature(double eta_initial, const ad::LrSchedule& lr);

/// One Adam step on log eta with gradient mean(-log pi - target_entropy).
/// Returns the new eta.
double temperature_update(Temperature& temp, std::span<const double> log_probs, double entropy_target);

struct EpisodeLog {
  std::size_t step = 0;
  std::size_t episode = 0;
  double ret = 0.0;
  double critic_loss = 0.0;  // episode means; NaN before learning starts
  double actor_loss = 0.0;
  double eta = 0.0;
};

struct Agent {
  GaussianPolicy policy;
  CriticEnsemble critics;
  Temperature temperature;
};

struct TrainingHooks {
  std::function<void(std::size_t step, const Agent& agent)> on_step;
};

struct TrainingResult {
  Agent agent;
  std::vector<EpisodeLog> log;
};

TrainingResult run_training(const envs::PendulumParams& env, const TqcConfig& cfg, std::uint64_t seed,
                            std::size_t total_steps, const TrainingHooks& hooks = {});

/// Deterministic (mean-action) returns; episode i resets with
/// derive_seed(seed, kEvaluation + i).
std::vector<double> evaluate(const GaussianPolicy& policy, const envs::PendulumParams& env,
                             std::size_t episodes, std::uint64_t seed);

std::vector<CheckpointBlock> to_blocks(const Agent& agent);
Agent from_blocks(const Checkpoint& ckpt, const TqcConfig& cfg);

}  // namespace rdrl::tqc

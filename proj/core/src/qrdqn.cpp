#include "rdrl/qrdqn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "rdrl/errors.hpp"

namespace rdrl::qrdqn {

using ad::Matrix;

void QrdqnConfig::validate() const {
  if (n_quantiles == 0) throw InvalidArgument("qrdqn: n_quantiles must be >= 1");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw InvalidArgument("qrdqn: alpha must be >= 0");
  if (!(gamma > 0.0 && gamma < 1.0)) throw InvalidArgument("qrdqn: gamma must lie in (0, 1)");
  if (!(kappa > 0.0)) throw InvalidArgument("qrdqn: kappa must be positive");
  if (!(lr > 0.0)) throw InvalidArgument("qrdqn: lr must be positive");
  if (batch == 0) throw InvalidArgument("qrdqn: batch must be >= 1");
  if (target_update_interval == 0) throw InvalidArgument("qrdqn: target_update_interval must be >= 1");
  if (!(target_polyak > 0.0 && target_polyak <= 1.0)) {
    throw InvalidArgument("qrdqn: target_polyak must lie in (0, 1]");
  }
  if (buffer_capacity == 0) throw InvalidArgument("qrdqn: buffer_capacity must be >= 1");
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!unit(epsilon_initial) || !unit(epsilon_final) || !unit(exploration_fraction)) {
    throw InvalidArgument("qrdqn: epsilon schedule values must lie in [0, 1]");
  }
  if (train_freq == 0) throw InvalidArgument("qrdqn: train_freq must be >= 1");
  if (max_grad_norm < 0.0) throw InvalidArgument("qrdqn: max_grad_norm must be >= 0");
  if (eval_interval > 0 && eval_episodes == 0) throw InvalidArgument("qrdqn: eval_episodes must be >= 1");
}

double QrdqnConfig::epsilon_at(std::size_t step, std::size_t total_steps) const {
  const double horizon = exploration_fraction * static_cast<double>(total_steps);
  if (horizon <= 0.0) return epsilon_final;
  const double frac = std::min(1.0, static_cast<double>(step) / horizon);
  return epsilon_initial + frac * (epsilon_final - epsilon_initial);
}

QNetwork QNetwork::create(std::size_t obs_dim, std::size_t n_actions, const QrdqnConfig& cfg, Rng& rng) {
  if (n_actions == 0) throw InvalidArgument("qrdqn: need at least one action");
  QNetwork net;
  net.spec.input_dim = obs_dim;
  net.spec.output_dim = n_actions * cfg.n_quantiles;
  net.spec.hidden = cfg.hidden;
  net.spec.validate();
  net.params = ad::init_mlp(net.spec, rng);
  net.n_actions = n_actions;
  net.n_quantiles = cfg.n_quantiles;
  return net;
}

Matrix QNetwork::atoms(const Matrix& states) const { return ad::mlp_predict(spec, params, states); }

std::size_t greedy_action(std::span<const double> row, std::size_t n_actions,
                          const quantile::PenaltyConfig& penalty) {
  if (n_actions == 0 || row.size() % n_actions != 0) {
    throw InvalidArgument("greedy_action: atom row does not split into actions");
  }
  const std::size_t m = row.size() / n_actions;
  std::size_t best = 0;
  double best_value = -std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < n_actions; ++a) {
    const double v = quantile::xi_alpha(row.subspan(a * m, m), penalty);
    if (v > best_value) {
      best_value = v;
      best = a;
    }
  }
  return best;
}

std::size_t select_action(const QNetwork& net, std::span<const double> state, double alpha_eff,
                          double epsilon, Rng& rng, quantile::StdNormalization norm) {
  if (!(alpha_eff >= 0.0)) throw InvalidArgument("select_action: alpha_eff must be >= 0");
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw InvalidArgument("select_action: epsilon must lie in [0, 1]");
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  if (coin(rng) < epsilon) {
    std::uniform_int_distribution<std::size_t> pick(0, net.n_actions - 1);
    return pick(rng);
  }
  Matrix x(1, static_cast<Eigen::Index>(state.size()));
  for (std::size_t i = 0; i < state.size(); ++i) x(0, static_cast<Eigen::Index>(i)) = state[i];
  const Matrix out = net.atoms(x);
  return greedy_action(std::span<const double>(out.data(), static_cast<std::size_t>(out.cols())),
                       net.n_actions, {alpha_eff, norm});
}

Matrix compute_targets(const Batch& batch, const QNetwork& target, const QrdqnConfig& cfg) {
  if (batch.size() == 0) throw InvalidArgument("compute_targets: empty batch");
  const auto m = static_cast<Eigen::Index>(target.n_quantiles);
  const Matrix next = target.atoms(batch.next_states);
  const auto penalty = cfg.penalty(cfg.alpha_eff_train());
  Matrix y(next.rows(), m);
  for (Eigen::Index r = 0; r < next.rows(); ++r) {
    std::span<const double> row(next.data() + r * next.cols(), static_cast<std::size_t>(next.cols()));
    const auto a = static_cast<Eigen::Index>(greedy_action(row, target.n_actions, penalty));
    const double cont = cfg.gamma * (1.0 - batch.dones(r, 0));
    for (Eigen::Index j = 0; j < m; ++j) y(r, j) = batch.rewards(r, 0) + cont * next(r, a * m + j);
  }
  return y;
}

ad::AdamState make_optimizer(const QNetwork& net, const QrdqnConfig& cfg) {
  ad::AdamConfig acfg;
  acfg.lr = ad::LrSchedule::constant(cfg.lr);
  acfg.max_grad_norm = cfg.max_grad_norm;
  return ad::AdamState(net.params, acfg);
}

std::optional<double> train_step(QNetwork& online, const QNetwork& target, const ReplayBuffer& buffer,
                                 const QrdqnConfig& cfg, ad::AdamState& optimizer, Rng& rng) {
  if (buffer.size() < cfg.batch) return std::nullopt;
  const Batch batch = buffer.sample(cfg.batch, rng);
  const Matrix y = compute_targets(batch, target, cfg);

  std::vector<std::size_t> actions(batch.size());
  for (std::size_t i = 0; i < actions.size(); ++i) {
    actions[i] = static_cast<std::size_t>(batch.actions(static_cast<Eigen::Index>(i), 0));
  }
  ad::Graph g;
  const auto p = g.bind(online.params);
  const ad::Var out = ad::mlp_forward(online.spec, p, g.constant(batch.states));
  const ad::Var pred = ad::gather_blocks(out, actions, static_cast<Eigen::Index>(online.n_quantiles));
  const ad::Var loss = ad::quantile_huber(pred, y, cfg.kappa);
  const auto grads = g.gradients(loss, online.params);
  optimizer.apply(online.params, grads);
  const double value = loss.scalar();
  if (!std::isfinite(value)) throw NumericFault("qrdqn: non-finite loss");
  return value;
}

void sync_target(const QNetwork& online, QNetwork& target, const QrdqnConfig& cfg) {
  if (cfg.target_polyak >= 1.0) {
    target.params = online.params;
  } else {
    ad::polyak_update(online.params, target.params, cfg.target_polyak);
  }
}

namespace {

Matrix row_matrix(const std::array<double, envs::kCartPoleObsDim>& obs) {
  Matrix x(1, static_cast<Eigen::Index>(obs.size()));
  for (std::size_t i = 0; i < obs.size(); ++i) x(0, static_cast<Eigen::Index>(i)) = obs[i];
  return x;
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

std::vector<double> evaluate(const QNetwork& net, const envs::CartPoleParams& env, double alpha_eff,
                             std::size_t episodes, std::uint64_t seed, quantile::StdNormalization norm) {
  env.validate();
  const quantile::PenaltyConfig penalty{alpha_eff, norm};
  std::vector<double> returns;
  returns.reserve(episodes);
  for (std::size_t i = 0; i < episodes; ++i) {
    auto state = envs::reset(env, derive_seed(seed, streams::kEvaluation + i));
    double total = 0.0;
    for (;;) {
      const Matrix out = net.atoms(row_matrix(envs::observe(state)));
      const auto a = greedy_action(std::span<const double>(out.data(), static_cast<std::size_t>(out.cols())),
                                   net.n_actions, penalty);
      const auto r = envs::step_cartpole(state, env, static_cast<int>(a));
      total += r.reward;
      if (r.done) break;
      state = r.next;
    }
    returns.push_back(total);
  }
  return returns;
}

TrainingResult run_training(const envs::CartPoleParams& env, const QrdqnConfig& cfg, std::uint64_t seed,
                            std::size_t total_steps, const TrainingHooks& hooks) {
  cfg.validate();
  env.validate();
  Rng init_rng(derive_seed(seed, streams::kInit));
  Rng explore_rng(derive_seed(seed, streams::kExplore));
  Rng replay_rng(derive_seed(seed, streams::kReplay));

  TrainingResult result;
  result.network = QNetwork::create(envs::kCartPoleObsDim, envs::kCartPoleActions, cfg, init_rng);
  if (total_steps == 0) return result;

  QNetwork& online = result.network;
  QNetwork target = online;
  auto optimizer = make_optimizer(online, cfg);
  ReplayBuffer buffer(std::min(cfg.buffer_capacity, total_steps), envs::kCartPoleObsDim, 1);

  const double a_train = cfg.alpha_eff_train();
  const std::uint64_t eval_seed = derive_seed(seed, streams::kPolicyNoise);
  std::optional<QNetwork> best;
  double best_score = -std::numeric_limits<double>::infinity();

  std::size_t episode = 0;
  auto state = envs::reset(env, derive_seed(seed, streams::kEpisodeReset));
  double ep_return = 0.0, ep_loss = 0.0;
  std::size_t ep_updates = 0;
  Transition t;
  t.action.resize(1);

  for (std::size_t step = 0; step < total_steps; ++step) {
    const double eps = cfg.epsilon_at(step, total_steps);
    const auto obs = envs::observe(state);
    const auto a = select_action(online, obs, a_train, eps, explore_rng, cfg.std_normalization);
    const auto r = envs::step_cartpole(state, env, static_cast<int>(a));
    const auto next_obs = envs::observe(r.next);
    t.state.assign(obs.begin(), obs.end());
    t.action[0] = static_cast<double>(a);
    t.reward = r.reward;
    t.next_state.assign(next_obs.begin(), next_obs.end());
    t.done = r.done && !r.truncated;
    buffer.push(t);
    ep_return += r.reward;

    const std::size_t done_steps = step + 1;
    if (done_steps > cfg.learning_starts && done_steps % cfg.train_freq == 0) {
      for (std::size_t k = 0; k < cfg.gradient_steps; ++k) {
        if (auto loss = train_step(online, target, buffer, cfg, optimizer, replay_rng)) {
          result.losses.push_back(*loss);
          ep_loss += *loss;
          ++ep_updates;
        }
      }
    }
    if (done_steps % cfg.target_update_interval == 0) sync_target(online, target, cfg);
    if (hooks.on_step) hooks.on_step(step, online, target);

    if (cfg.eval_interval > 0 && done_steps % cfg.eval_interval == 0 && done_steps > cfg.learning_starts) {
      const double score = mean_of(evaluate(online, env, cfg.alpha_eff_test(), cfg.eval_episodes, eval_seed,
                                            cfg.std_normalization));
      if (score >= best_score) {
        best_score = score;
        best = online;
      }
    }

    if (r.done) {
      EpisodeLog row;
      row.step = done_steps;
      row.episode = episode;
      row.ret = ep_return;
      row.loss = ep_updates > 0 ? ep_loss / static_cast<double>(ep_updates)
                                : std::numeric_limits<double>::quiet_NaN();
      row.epsilon = eps;
      row.alpha_eff_train = a_train;
      row.alpha_eff_test = cfg.alpha_eff_test();
      result.log.push_back(row);
      ++episode;
      state = envs::reset(env, derive_seed(seed, streams::kEpisodeReset + episode));
      ep_return = 0.0;
      ep_loss = 0.0;
      ep_updates = 0;
    } else {
      state = r.next;
    }
  }

  if (best) {
    const double final_score = mean_of(evaluate(online, env, cfg.alpha_eff_test(), cfg.eval_episodes,
                                                eval_seed, cfg.std_normalization));
    if (final_score < best_score) online = std::move(*best);
  }
  return result;
}

CheckpointBlock to_block(const QNetwork& net) {
  return {kCheckpointBlock, net.spec.hash(), net.params.flatten()};
}

QNetwork from_block(const CheckpointBlock& block, std::size_t obs_dim, std::size_t n_actions,
                    const QrdqnConfig& cfg) {
  Rng rng(0);
  QNetwork net = QNetwork::create(obs_dim, n_actions, cfg, rng);
  if (block.spec_hash != net.spec.hash()) {
    throw ConfigError("checkpoint architecture does not match " + net.spec.describe());
  }
  if (block.values.size() != net.params.scalar_count()) {
    throw ConfigError("checkpoint parameter count mismatch");
  }
  net.params.assign_flat(block.values);
  return net;
}

}  // namespace rdrl::qrdqn

#include "rdrl/tqc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "rdrl/autodiff.hpp"
#include "rdrl/errors.hpp"

namespace rdrl::tqc {

using ad::Graph;
using ad::Matrix;
using ad::Var;

TqcConfig TqcConfig::desk() {
  TqcConfig cfg;
  cfg.n_critics = 2;
  cfg.critic_hidden = {256, 256};
  return cfg;
}

void TqcConfig::validate() const {
  if (n_critics == 0) throw InvalidArgument("tqc: n_critics must be >= 1");
  if (n_quantiles == 0) throw InvalidArgument("tqc: n_quantiles must be >= 1");
  if (drop_per_critic >= n_quantiles) throw InvalidArgument("tqc: need 0 <= d < M");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw InvalidArgument("tqc: alpha must be >= 0");
  if (!(kappa > 0.0)) throw InvalidArgument("tqc: kappa must be positive");
  if (!(gamma > 0.0 && gamma < 1.0)) throw InvalidArgument("tqc: gamma must lie in (0, 1)");
  if (!(beta >= 0.0 && beta <= 1.0)) throw InvalidArgument("tqc: beta must lie in [0, 1]");
  if (batch == 0) throw InvalidArgument("tqc: batch must be >= 1");
  if (!(lr_initial > 0.0) || lr_final < 0.0) throw InvalidArgument("tqc: invalid learning rate schedule");
  if (buffer_capacity == 0) throw InvalidArgument("tqc: buffer_capacity must be >= 1");
  if (!(eta_initial > 0.0)) throw InvalidArgument("tqc: eta_initial must be positive");
  if (!(log_std_min < log_std_max)) throw InvalidArgument("tqc: log_std_min must be below log_std_max");
  if (train_freq == 0) throw InvalidArgument("tqc: train_freq must be >= 1");
}

GaussianPolicy GaussianPolicy::create(std::size_t obs_dim, std::size_t action_dim, double action_limit,
                                      const TqcConfig& cfg, Rng& rng) {
  if (action_dim == 0) throw InvalidArgument("tqc: action_dim must be >= 1");
  if (!(action_limit > 0.0)) throw InvalidArgument("tqc: action_limit must be positive");
  GaussianPolicy p;
  p.spec.input_dim = obs_dim;
  p.spec.output_dim = 2 * action_dim;
  p.spec.hidden = cfg.actor_hidden;
  p.spec.validate();
  p.params = ad::init_mlp(p.spec, rng);
  p.action_dim = action_dim;
  p.action_limit = action_limit;
  p.log_std_min = cfg.log_std_min;
  p.log_std_max = cfg.log_std_max;
  return p;
}

Matrix GaussianPolicy::deterministic_action(const Matrix& states) const {
  const Matrix out = ad::mlp_predict(spec, params, states);
  const auto d = static_cast<Eigen::Index>(action_dim);
  Matrix a = out.leftCols(d).array().tanh() * action_limit;
  if (!a.allFinite()) throw NumericFault("tqc: non-finite policy output");
  return a;
}

CriticEnsemble CriticEnsemble::create(std::size_t obs_dim, std::size_t action_dim, const TqcConfig& cfg,
                                      Rng& rng) {
  CriticEnsemble e;
  e.spec.input_dim = obs_dim + action_dim;
  e.spec.output_dim = cfg.n_quantiles;
  e.spec.hidden = cfg.critic_hidden;
  e.spec.validate();
  for (std::size_t c = 0; c < cfg.n_critics; ++c) e.online.push_back(ad::init_mlp(e.spec, rng));
  e.target = e.online;
  return e;
}

Matrix CriticEnsemble::atoms(const std::vector<ad::ParamSet>& nets, std::size_t c, const Matrix& states,
                             const Matrix& actions) const {
  Matrix x(states.rows(), states.cols() + actions.cols());
  x << states, actions;
  return ad::mlp_predict(spec, nets.at(c), x);
}

namespace {

struct PolicyVars {
  Var action;
  Var log_prob;
  Var pre_squash;
};

// Reparameterised squashed Gaussian. log pi(a) = log N(u) - sum log(limit (1 - tanh(u)^2)),
// with log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u)).
PolicyVars policy_graph(Graph& g, const GaussianPolicy& p, std::span<const Var> params, Var states,
                        const Matrix& noise) {
  const auto d = static_cast<Eigen::Index>(p.action_dim);
  if (noise.cols() != d || noise.rows() != states.rows()) throw InvalidArgument("tqc: noise shape mismatch");
  const Var out = ad::mlp_forward(p.spec, params, states);
  const Var mean = ad::slice_cols(out, 0, d);
  const Var log_std = ad::clamp(ad::slice_cols(out, d, d), p.log_std_min, p.log_std_max);
  const Var u = mean + ad::exp(log_std) * g.constant(noise);
  const Var action = ad::scale(ad::tanh(u), p.action_limit);
  const Var log_n = ad::gaussian_log_density(u, mean, log_std);
  const Var log_jac = ad::scale(ad::add_scalar(-u - ad::softplus(ad::scale(u, -2.0)), std::numbers::ln2), 2.0);
  const Var log_prob =
      ad::add_scalar(log_n - ad::row_sum(log_jac), -static_cast<double>(d) * std::log(p.action_limit));
  return {action, log_prob, u};
}

Var xi_graph(Var atoms, const quantile::PenaltyConfig& penalty) {
  Var xi = ad::row_mean(atoms);
  if (penalty.alpha != 0.0) {
    const bool normalize = penalty.std_normalization == quantile::StdNormalization::MeanSquare;
    xi = xi - ad::scale(ad::row_std(atoms, normalize), penalty.alpha);
  }
  return xi;
}

Matrix row_of(std::span<const double> v) {
  Matrix x(1, static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) x(0, static_cast<Eigen::Index>(i)) = v[i];
  return x;
}

}  // namespace

Matrix draw_noise(std::size_t rows, std::size_t cols, Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Matrix e(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < e.size(); ++i) e.data()[i] = n01(rng);
  return e;
}

SampledAction sample_action(const GaussianPolicy& policy, const Matrix& states, const Matrix& noise) {
  Graph g;
  const auto p = g.bind(policy.params, false);
  const PolicyVars v = policy_graph(g, policy, p, g.constant(states), noise);
  SampledAction s{v.action.value(), v.log_prob.value(), v.pre_squash.value()};
  if (!s.action.allFinite() || !s.log_prob.allFinite()) throw NumericFault("tqc: non-finite policy sample");
  return s;
}

SampledAction sample_action(const GaussianPolicy& policy, const Matrix& states, Rng& rng) {
  return sample_action(policy, states,
                       draw_noise(static_cast<std::size_t>(states.rows()), policy.action_dim, rng));
}

std::vector<double> pool_and_truncate(const std::vector<std::vector<double>>& atoms_per_critic,
                                      std::size_t d) {
  if (atoms_per_critic.empty()) throw InvalidArgument("pool_and_truncate: no critics");
  const std::size_t m = atoms_per_critic.front().size();
  if (d >= m) throw InvalidArgument("pool_and_truncate: need 0 <= d < M");
  std::vector<double> pooled;
  pooled.reserve(m * atoms_per_critic.size());
  for (const auto& atoms : atoms_per_critic) {
    if (atoms.size() != m) throw InvalidArgument("pool_and_truncate: critics disagree on M");
    pooled.insert(pooled.end(), atoms.begin(), atoms.end());
  }
  std::sort(pooled.begin(), pooled.end());
  pooled.resize((m - d) * atoms_per_critic.size());
  return pooled;
}

Matrix compute_targets(const Batch& batch, const CriticEnsemble& critics, const GaussianPolicy& policy,
                       double eta, const TqcConfig& cfg, const Matrix& noise) {
  if (batch.size() == 0) throw InvalidArgument("tqc compute_targets: empty batch");
  if (!(eta >= 0.0)) throw InvalidArgument("tqc compute_targets: eta must be >= 0");
  if (cfg.drop_per_critic >= critics.spec.output_dim) throw InvalidArgument("tqc: need 0 <= d < M");
  const SampledAction next = sample_action(policy, batch.next_states, noise);
  const std::size_t c_count = critics.size();
  std::vector<Matrix> atoms;
  atoms.reserve(c_count);
  for (std::size_t c = 0; c < c_count; ++c) {
    atoms.push_back(critics.atoms(critics.target, c, batch.next_states, next.action));
  }
  const auto m = static_cast<std::size_t>(critics.spec.output_dim);
  const std::size_t kept = (m - cfg.drop_per_critic) * c_count;
  Matrix y(batch.states.rows(), static_cast<Eigen::Index>(kept));
  std::vector<double> pooled(m * c_count);
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    for (std::size_t c = 0; c < c_count; ++c) {
      for (std::size_t j = 0; j < m; ++j) pooled[c * m + j] = atoms[c](r, static_cast<Eigen::Index>(j));
    }
    std::sort(pooled.begin(), pooled.end());
    const double cont = cfg.gamma * (1.0 - batch.dones(r, 0));
    const double entropy = eta * next.log_prob(r, 0);
    for (std::size_t i = 0; i < kept; ++i) {
      y(r, static_cast<Eigen::Index>(i)) = batch.rewards(r, 0) + cont * (pooled[i] - entropy);
    }
  }
  return y;
}

Matrix compute_targets(const Batch& batch, const CriticEnsemble& critics, const GaussianPolicy& policy,
                       double eta, const TqcConfig& cfg, Rng& rng) {
  return compute_targets(batch, critics, policy, eta, cfg, draw_noise(batch.size(), policy.action_dim, rng));
}

CriticLoss critic_loss_grad(const CriticEnsemble& critics, const Batch& batch, const Matrix& targets,
                            const TqcConfig& cfg) {
  Graph g;
  Matrix x(batch.states.rows(), batch.states.cols() + batch.actions.cols());
  x << batch.states, batch.actions;
  const Var input = g.constant(std::move(x));
  std::vector<std::vector<Var>> bound;
  Var total;
  for (std::size_t c = 0; c < critics.size(); ++c) {
    bound.push_back(g.bind(critics.online[c]));
    const Var pred = ad::mlp_forward(critics.spec, bound.back(), input);
    const Var l = ad::quantile_huber(pred, targets, cfg.kappa);
    total = c == 0 ? l : total + l;
  }
  total = ad::scale(total, 1.0 / static_cast<double>(critics.size()));
  CriticLoss out;
  g.backward(total);
  out.value = total.scalar();
  for (const auto& net : critics.online) out.grads.push_back(g.collect(net));
  return out;
}

double critic_loss(const CriticEnsemble& critics, const Batch& batch, const Matrix& targets,
                   const TqcConfig& cfg) {
  return critic_loss_grad(critics, batch, targets, cfg).value;
}

ActorLoss actor_loss_grad(const GaussianPolicy& policy, const CriticEnsemble& critics, const Matrix& states,
                          const Matrix& noise, double eta, const TqcConfig& cfg) {
  Graph g;
  const auto pp = g.bind(policy.params);
  const Var s = g.constant(states);
  const PolicyVars pv = policy_graph(g, policy, pp, s, noise);
  const Var input = ad::concat_cols(s, pv.action);
  Var q;
  for (std::size_t c = 0; c < critics.size(); ++c) {
    const auto cp = g.bind(critics.online[c], false);
    const Var xi = xi_graph(ad::mlp_forward(critics.spec, cp, input), cfg.penalty());
    q = c == 0 ? xi : q + xi;
  }
  q = ad::scale(q, 1.0 / static_cast<double>(critics.size()));
  const Var loss = ad::mean(ad::scale(pv.log_prob, eta) - q);
  ActorLoss out;
  out.grads = g.gradients(loss, policy.params);
  out.value = loss.scalar();
  out.log_prob = pv.log_prob.value();
  return out;
}

double actor_loss(const GaussianPolicy& policy, const CriticEnsemble& critics, const Batch& batch, double eta,
                  const TqcConfig& cfg, Rng& rng) {
  return actor_loss_grad(policy, critics, batch.states, draw_noise(batch.size(), policy.action_dim, rng), eta,
                         cfg)
      .value;
}

double Temperature::eta() const { return std::exp(log_eta); }

Temperature make_temperature(double eta_initial, const ad::LrSchedule& lr) {
  if (!(eta_initial > 0.0)) throw InvalidArgument("temperature: eta must be positive");
  ad::AdamConfig cfg;
  cfg.lr = lr;
  return Temperature{std::log(eta_initial), ad::ScalarAdam(cfg)};
}

double temperature_update(Temperature& temp, std::span<const double> log_probs, double entropy_target) {
  if (log_probs.empty()) throw InvalidArgument("temperature_update: no log-probabilities");
  double g = 0.0;
  for (double lp : log_probs) g += -lp - entropy_target;
  g /= static_cast<double>(log_probs.size());
  temp.log_eta = temp.optimizer.apply(temp.log_eta, g);
  return temp.eta();
}

std::vector<double> evaluate(const GaussianPolicy& policy, const envs::PendulumParams& env,
                             std::size_t episodes, std::uint64_t seed) {
  env.validate();
  std::vector<double> returns;
  returns.reserve(episodes);
  for (std::size_t i = 0; i < episodes; ++i) {
    auto state = envs::reset(env, derive_seed(seed, streams::kEvaluation + i));
    double total = 0.0;
    for (;;) {
      const Matrix a = policy.deterministic_action(row_of(envs::observe(state)));
      const auto r = envs::step_pendulum(state, env, a(0, 0));
      total += r.reward;
      if (r.done) break;
      state = r.next;
    }
    returns.push_back(total);
  }
  return returns;
}

TrainingResult run_training(const envs::PendulumParams& env, const TqcConfig& cfg, std::uint64_t seed,
                            std::size_t total_steps, const TrainingHooks& hooks) {
  cfg.validate();
  env.validate();
  constexpr std::size_t obs_dim = envs::kPendulumObsDim;
  constexpr std::size_t act_dim = envs::kPendulumActionDim;
  Rng init_rng(derive_seed(seed, streams::kInit));
  Rng explore_rng(derive_seed(seed, streams::kExplore));
  Rng replay_rng(derive_seed(seed, streams::kReplay));
  Rng noise_rng(derive_seed(seed, streams::kPolicyNoise));

  const std::size_t updates =
      total_steps > cfg.learning_starts
          ? std::max<std::size_t>(1, (total_steps - cfg.learning_starts) / cfg.train_freq * cfg.gradient_steps)
          : 1;
  const auto lr = ad::LrSchedule::linear(cfg.lr_initial, cfg.lr_final, updates);

  TrainingResult result;
  Agent& agent = result.agent;
  agent.policy = GaussianPolicy::create(obs_dim, act_dim, env.torque_limit, cfg, init_rng);
  agent.critics = CriticEnsemble::create(obs_dim, act_dim, cfg, init_rng);
  agent.temperature = make_temperature(cfg.eta_initial, lr);
  if (total_steps == 0) return result;

  ad::AdamConfig acfg;
  acfg.lr = lr;
  ad::AdamState actor_opt(agent.policy.params, acfg);
  std::vector<ad::AdamState> critic_opt;
  for (const auto& net : agent.critics.online) critic_opt.emplace_back(net, acfg);
  ReplayBuffer buffer(std::min(cfg.buffer_capacity, total_steps), obs_dim, act_dim);
  const double entropy_target = cfg.target_entropy(act_dim);
  std::uniform_real_distribution<double> uniform_action(-env.torque_limit, env.torque_limit);

  std::size_t episode = 0;
  auto state = envs::reset(env, derive_seed(seed, streams::kEpisodeReset));
  double ep_return = 0.0, ep_critic = 0.0, ep_actor = 0.0;
  std::size_t ep_updates = 0;
  Transition t;

  for (std::size_t step = 0; step < total_steps; ++step) {
    const auto obs = envs::observe(state);
    double torque;
    if (step < cfg.learning_starts) {
      torque = uniform_action(explore_rng);
    } else {
      torque = sample_action(agent.policy, row_of(obs), explore_rng).action(0, 0);
    }
    const auto r = envs::step_pendulum(state, env, torque);
    const auto next_obs = envs::observe(r.next);
    t.state.assign(obs.begin(), obs.end());
    t.action.assign(1, torque);
    t.reward = r.reward;
    t.next_state.assign(next_obs.begin(), next_obs.end());
    t.done = r.done && !r.truncated;
    buffer.push(t);
    ep_return += r.reward;

    const std::size_t done_steps = step + 1;
    if (done_steps > cfg.learning_starts && done_steps % cfg.train_freq == 0 && buffer.size() >= cfg.batch) {
      for (std::size_t k = 0; k < cfg.gradient_steps; ++k) {
        const Batch batch = buffer.sample(cfg.batch, replay_rng);
        // Targets with the current temperature, then eta, actor, critics, targets.
        const Matrix y = compute_targets(batch, agent.critics, agent.policy, agent.temperature.eta(), cfg,
                                         noise_rng);
        const Matrix noise = draw_noise(batch.size(), act_dim, noise_rng);
        const Matrix log_prob = sample_action(agent.policy, batch.states, noise).log_prob;
        const double eta = temperature_update(
            agent.temperature, std::span<const double>(log_prob.data(), static_cast<std::size_t>(log_prob.size())),
            entropy_target);
        const ActorLoss al = actor_loss_grad(agent.policy, agent.critics, batch.states, noise, eta, cfg);
        actor_opt.apply(agent.policy.params, al.grads);
        const CriticLoss cl = critic_loss_grad(agent.critics, batch, y, cfg);
        for (std::size_t c = 0; c < agent.critics.size(); ++c) {
          critic_opt[c].apply(agent.critics.online[c], cl.grads[c]);
          ad::polyak_update(agent.critics.online[c], agent.critics.target[c], cfg.beta);
        }
        if (!std::isfinite(al.value) || !std::isfinite(cl.value)) throw NumericFault("tqc: non-finite loss");
        ep_actor += al.value;
        ep_critic += cl.value;
        ++ep_updates;
      }
    }
    if (hooks.on_step) hooks.on_step(step, agent);

    if (r.done) {
      const double nan = std::numeric_limits<double>::quiet_NaN();
      EpisodeLog row;
      row.step = done_steps;
      row.episode = episode;
      row.ret = ep_return;
      row.critic_loss = ep_updates ? ep_critic / static_cast<double>(ep_updates) : nan;
      row.actor_loss = ep_updates ? ep_actor / static_cast<double>(ep_updates) : nan;
      row.eta = agent.temperature.eta();
      result.log.push_back(row);
      ++episode;
      state = envs::reset(env, derive_seed(seed, streams::kEpisodeReset + episode));
      ep_return = ep_critic = ep_actor = 0.0;
      ep_updates = 0;
    } else {
      state = r.next;
    }
  }
  return result;
}

std::vector<CheckpointBlock> to_blocks(const Agent& agent) {
  std::vector<CheckpointBlock> blocks;
  blocks.push_back({"policy", agent.policy.spec.hash(), agent.policy.params.flatten()});
  for (std::size_t c = 0; c < agent.critics.size(); ++c) {
    blocks.push_back({"critic." + std::to_string(c), agent.critics.spec.hash(), agent.critics.online[c].flatten()});
    blocks.push_back(
        {"critic_target." + std::to_string(c), agent.critics.spec.hash(), agent.critics.target[c].flatten()});
  }
  blocks.push_back({"log_eta", 0, {agent.temperature.log_eta}});
  return blocks;
}

namespace {

void restore(ad::ParamSet& params, const ad::MlpSpec& spec, const CheckpointBlock& block) {
  if (block.spec_hash != spec.hash()) {
    throw ConfigError("checkpoint block '" + block.name + "' does not match " + spec.describe());
  }
  if (block.values.size() != params.scalar_count()) {
    throw ConfigError("checkpoint block '" + block.name + "' has the wrong size");
  }
  params.assign_flat(block.values);
}

}  // namespace

Agent from_blocks(const Checkpoint& ckpt, const TqcConfig& cfg) {
  const envs::PendulumParams env;
  Rng rng(0);
  Agent agent;
  agent.policy = GaussianPolicy::create(envs::kPendulumObsDim, envs::kPendulumActionDim, env.torque_limit, cfg, rng);
  agent.critics = CriticEnsemble::create(envs::kPendulumObsDim, envs::kPendulumActionDim, cfg, rng);
  restore(agent.policy.params, agent.policy.spec, ckpt.block("policy"));
  for (std::size_t c = 0; c < agent.critics.size(); ++c) {
    restore(agent.critics.online[c], agent.critics.spec, ckpt.block("critic." + std::to_string(c)));
    restore(agent.critics.target[c], agent.critics.spec, ckpt.block("critic_target." + std::to_string(c)));
  }
  const auto& le = ckpt.block("log_eta");
  if (le.values.size() != 1) throw ConfigError("checkpoint block 'log_eta' has the wrong size");
  agent.temperature = make_temperature(1.0, ad::LrSchedule::constant(cfg.lr_initial));
  agent.temperature.log_eta = le.values[0];
  return agent;
}

}  // namespace rdrl::tqc

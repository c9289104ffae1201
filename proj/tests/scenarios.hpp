#pragma once

// Training scenarios shared by the unit suites and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "rdrl/adam.hpp"
#include "rdrl/qrdqn.hpp"
#include "rdrl/replay.hpp"

namespace rdrl::scenarios {

struct FixedPointRun {
  std::vector<double> atoms;  // final online atoms for the only (s, a)
  double target = 0.0;        // r / (1 - gamma)
  double max_abs_error = 0.0;
  std::size_t updates = 0;
};

/// One state, one action, constant reward: the distributional backup has
/// every atom at r / (1 - gamma). Drives train_step / sync_target directly.
inline FixedPointRun backup_fixed_point(double reward, double gamma, std::uint64_t seed,
                                        std::size_t syncs = 2500, std::size_t updates_per_sync = 40) {
  qrdqn::QrdqnConfig cfg;
  cfg.gamma = gamma;
  cfg.batch = 1;  // every sample is the same transition
  cfg.hidden = {32};
  cfg.max_grad_norm = 0.0;
  Rng rng(seed);
  qrdqn::QNetwork online = qrdqn::QNetwork::create(1, 1, cfg, rng);
  qrdqn::QNetwork target = online;

  ReplayBuffer buffer(1, 1, 1);
  buffer.push({{1.0}, {0.0}, reward, {1.0}, false});

  const std::size_t total = syncs * updates_per_sync;
  ad::AdamConfig acfg;
  acfg.lr = ad::LrSchedule::linear(2e-2, 1e-5, total);
  ad::AdamState adam(online.params, acfg);

  FixedPointRun run;
  for (std::size_t k = 0; k < total; ++k) {
    qrdqn::train_step(online, target, buffer, cfg, adam, rng);
    if ((k + 1) % updates_per_sync == 0) qrdqn::sync_target(online, target, cfg);
  }
  run.updates = total;
  run.target = reward / (1.0 - gamma);
  const ad::Matrix out = online.atoms(ad::Matrix::Constant(1, 1, 1.0));
  run.atoms.assign(out.data(), out.data() + out.size());
  for (double a : run.atoms) run.max_abs_error = std::max(run.max_abs_error, std::abs(a - run.target));
  return run;
}

}  // namespace rdrl::scenarios

#pragma once

// Run configuration: JSON file < RDRL_* environment variables < CLI flags.
//
// Keys (all optional, defaults shown by `rdrl train --print-config`):
//   env, seed, out, steps, alpha, penalize_train, penalize_test,
//   std_normalization ("mean_square" | "paper_literal"), eval_episodes,
//   cartpole.{...}, pendulum.{...}, qrdqn.{...}, tqc.{...},
//   sweep.{multiplier, grid, episodes, checkpoint, seed, alpha},
//   verify.{cases, over_cases, zero_cases, seed, tolerance, min_outcomes,
//           max_outcomes, return_range, closed_form_bias},
//   tuning.{window, logs}
// Unknown keys are rejected. Environment variables map nested keys with a
// double underscore: RDRL_QRDQN__LR=0.001 sets qrdqn.lr.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rdrl/envs.hpp"
#include "rdrl/qrdqn.hpp"
#include "rdrl/tqc.hpp"

namespace rdrl::config {

inline constexpr const char* kEnvPrefix = "RDRL_";

enum class EnvId { CartPole, Pendulum };

std::string to_string(EnvId env);
EnvId parse_env(const std::string& name);

struct SweepSection {
  std::string multiplier = "relative_mass";
  std::vector<double> grid;  // default 0.5, 0.6, ..., 2.0
  std::size_t episodes = 20;
  std::string checkpoint;  // default <out>/checkpoint.bin
  std::uint64_t seed = 0;  // evaluation seed; 0 => run seed
  std::optional<double> alpha;  // evaluation alpha; unset => training alpha

  SweepSection();
};

struct VerifySection {
  std::size_t cases = 200;       // alpha in (0, alpha_max]
  std::size_t over_cases = 50;   // alpha > alpha_max
  std::size_t zero_cases = 10;   // alpha = 0
  std::uint64_t seed = 1;
  double tolerance = 1e-4;
  std::size_t min_outcomes = 2;
  std::size_t max_outcomes = 6;
  double return_range = 5.0;     // returns uniform in [-range, range]
  double closed_form_bias = 0.0; // test hook: corrupts the closed form
};

struct TuningSection {
  std::size_t window = 20;  // final episodes used for the statistics
  std::vector<std::string> logs;
};

struct RunConfig {
  EnvId env = EnvId::CartPole;
  std::uint64_t seed = 0;
  std::string out = "out";
  std::optional<std::size_t> steps;  // default per env
  double alpha = 0.0;
  bool penalize_train = true;
  bool penalize_test = true;
  quantile::StdNormalization std_normalization = quantile::StdNormalization::MeanSquare;
  std::size_t eval_episodes = 20;
  envs::CartPoleParams cartpole;
  envs::PendulumParams pendulum;
  qrdqn::QrdqnConfig qrdqn;  // alpha / flags / std convention taken from the top level
  tqc::TqcConfig tqc = tqc::TqcConfig::desk();
  SweepSection sweep;
  VerifySection verify;
  TuningSection tuning;

  std::size_t total_steps() const;
  /// Agent configs with the shared top-level keys applied.
  qrdqn::QrdqnConfig qrdqn_config() const;
  tqc::TqcConfig tqc_config() const;
  std::filesystem::path checkpoint_path() const;
  std::uint64_t sweep_seed() const { return sweep.seed ? sweep.seed : seed; }
  void validate() const;
};

/// Resolved configuration as JSON text (sorted keys, 2-space indent).
std::string to_json(const RunConfig& cfg);
RunConfig from_json(const std::string& text);

/// FNV-1a over the resolved JSON with "out" removed, as 16 hex digits.
std::string config_hash(const RunConfig& cfg);

/// Overrides given as dotted key paths with JSON-or-string values.
using Overrides = std::map<std::string, std::string>;

/// Collects RDRL_* variables from `environ`.
Overrides env_overrides();
Overrides env_overrides(const std::vector<std::string>& environment);

/// Loads `file` (if given) then applies overrides in order. Every key path
/// must name an existing setting.
RunConfig resolve(const std::optional<std::filesystem::path>& file, const std::vector<Overrides>& layers);

}  // namespace rdrl::config

#pragma once

// Orchestration behind the rdrl command line: training, robustness sweeps,
// the penalisation ablation matrix, tabular certification and the
// mean/variance tuning report. Every command writes CSV tables.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rdrl/checkpoint.hpp"
#include "rdrl/config.hpp"
#include "rdrl/csv.hpp"

namespace rdrl::harness {

struct TrainOutputs {
  std::filesystem::path checkpoint;
  std::filesystem::path log;
  std::filesystem::path config;
  csv::Table log_table;
};

/// Trains the agent selected by cfg.env and writes checkpoint.bin,
/// train_log.csv and config.json under cfg.out.
TrainOutputs cmd_train(const config::RunConfig& cfg);

struct SweepSpec {
  config::EnvId env = config::EnvId::CartPole;
  std::string multiplier = "relative_mass";
  std::vector<double> grid;
  std::size_t episodes = 20;
  std::filesystem::path checkpoint;
  bool penalize_test = true;
  double alpha = 0.0;  // evaluation alpha (before penalize_test)
  std::uint64_t seed = 0;

  void validate() const;
};

struct SweepPoint {
  double multiplier = 0.0;
  double mean = 0.0;
  double std = 0.0;  // population std over episodes
  double min = 0.0;
  double max = 0.0;
  double normalized = 0.0;
  std::vector<double> returns;
};

struct SweepReport {
  std::string label;
  std::vector<SweepPoint> points;
  csv::Table table;
};

inline constexpr const char* kSweepSchema = "sweep/1";
inline constexpr const char* kQrdqnLogSchema = "qrdqn_log/1";
inline constexpr const char* kTqcLogSchema = "tqc_log/1";
inline constexpr const char* kVerifySchema = "verify_bound/1";
inline constexpr const char* kTuningSchema = "tuning_report/1";

/// Mean divided by the largest mean of the curve. Curves whose largest mean
/// is not positive are min-max scaled instead, so the maximum is still 1.
std::vector<double> normalize_curve(const std::vector<double>& means);

/// Evaluation seed of grid point i.
std::uint64_t sweep_point_seed(std::uint64_t seed, std::size_t index);

/// Builds a SweepSpec from the run configuration; the evaluation alpha falls
/// back to the alpha stored in the checkpoint.
SweepSpec sweep_spec(const config::RunConfig& cfg, const Checkpoint& ckpt);

/// Evaluates a checkpoint across the grid. `env_cfg` supplies the nominal
/// physics the multiplier is applied to. Never writes the checkpoint.
SweepReport run_sweep(const config::RunConfig& env_cfg, const SweepSpec& spec, const Checkpoint& ckpt);

/// Loads the checkpoint, sweeps, writes <out>/sweep.csv.
SweepReport cmd_sweep(const config::RunConfig& cfg);

/// Labels in emission order.
inline const std::vector<std::string> kAblationLabels = {"full", "train_only", "test_only", "none"};

/// Trains with penalize_train on and off (shared seed), sweeps each with
/// penalize_test on and off, writes <out>/ablate_<label>.csv.
std::vector<SweepReport> cmd_ablate(const config::RunConfig& cfg);

struct VerifyOutcome {
  csv::Table table;
  std::size_t feasible_cases = 0;
  std::size_t feasible_failures = 0;
  std::size_t over_cases = 0;
  std::size_t over_failures = 0;
  std::size_t strict_lower_bound_cases = 0;  // oracle > closed form + tolerance
  std::size_t boundary_failures = 0;         // worst case off the ball boundary
  std::size_t worst_case_mean_failures = 0;
  double max_abs_error = 0.0;
  double seconds = 0.0;

  bool passed() const { return feasible_failures == 0 && over_failures == 0; }
};

/// Randomised certification of the chi-square closed form; writes
/// <out>/verify_bound.csv.
VerifyOutcome cmd_verify_bound(const config::RunConfig& cfg);

struct TuningRow {
  std::string log;
  std::size_t episodes = 0;
  double mean = 0.0;
  double variance = 0.0;
  double ratio = 0.0;  // +inf when the variance is zero
  std::string guidance;
};

/// Mean, population variance and mean/variance ratio of the final `window`
/// returns. Throws InvalidArgument on an empty list.
TuningRow tuning_statistics(const std::vector<double>& returns, std::size_t window);
std::string tuning_guidance(double ratio);

/// Reads the "return" column of each training log; writes
/// <out>/tuning_report.csv.
std::vector<TuningRow> cmd_tuning_report(const config::RunConfig& cfg);

}  // namespace rdrl::harness

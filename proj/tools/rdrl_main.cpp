// rdrl: command-line front end.
//
//   rdrl train          [--config F] [--env E] [--seed N] [--alpha X] [--out DIR] ...
//   rdrl sweep          [--checkpoint F] [--multiplier NAME] [--grid 0.5,1,2] [--episodes N]
//   rdrl ablate         [--alpha X] [--multiplier NAME] [--grid ...]
//   rdrl verify-bound   [--seed N]
//   rdrl tuning-report  LOG.csv [LOG.csv ...]
//
// Settings resolve as: defaults < --config file < RDRL_* variables < flags.
// Exit codes: 0 success, 1 certification failure, 2 configuration error,
// 3 runtime error.

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rdrl/config.hpp"
#include "rdrl/errors.hpp"
#include "rdrl/harness.hpp"

namespace {

using rdrl::config::Overrides;

std::string parse_bool(std::string v) {
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
  if (v == "true" || v == "1" || v == "yes" || v == "on") return "true";
  if (v == "false" || v == "0" || v == "no" || v == "off") return "false";
  throw rdrl::ConfigError("expected a boolean, got '" + v + "'");
}

std::string grid_json(const std::string& csv) {
  std::string out = "[";
  std::string cell;
  auto flush = [&] {
    if (cell.empty()) throw rdrl::ConfigError("empty value in --grid");
    std::size_t used = 0;
    try {
      (void)std::stod(cell, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != cell.size()) throw rdrl::ConfigError("--grid value '" + cell + "' is not a number");
    out += (out.size() > 1 ? "," : "") + cell;
    cell.clear();
  };
  for (char c : csv) {
    if (c == ',') {
      flush();
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      cell += c;
    }
  }
  flush();
  return out + "]";
}

std::string quoted(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + "\"";
}

struct Flags {
  std::optional<std::string> config;
  std::optional<std::string> seed, out, alpha, env, multiplier, grid, episodes, steps, checkpoint;
  std::optional<std::string> penalize_train, penalize_test;
  std::vector<std::string> set;
  std::vector<std::string> logs;
  bool print_config = false;

  Overrides overrides() const {
    Overrides o;
    if (seed) o["seed"] = *seed;
    if (out) o["out"] = quoted(*out);
    if (alpha) o["alpha"] = *alpha;
    if (env) o["env"] = quoted(*env);
    if (multiplier) o["sweep.multiplier"] = quoted(*multiplier);
    if (grid) o["sweep.grid"] = grid_json(*grid);
    if (episodes) {
      o["sweep.episodes"] = *episodes;
      o["eval_episodes"] = *episodes;
    }
    if (steps) o["steps"] = *steps;
    if (checkpoint) o["sweep.checkpoint"] = quoted(*checkpoint);
    if (penalize_train) o["penalize_train"] = parse_bool(*penalize_train);
    if (penalize_test) o["penalize_test"] = parse_bool(*penalize_test);
    if (!logs.empty()) {
      std::string arr = "[";
      for (std::size_t i = 0; i < logs.size(); ++i) arr += (i ? "," : "") + quoted(logs[i]);
      o["tuning.logs"] = arr + "]";
    }
    for (const auto& kv : set) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos || eq == 0) throw rdrl::ConfigError("--set expects KEY=VALUE, got '" + kv + "'");
      o[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
    return o;
  }
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "JSON configuration file");
  cmd->add_option("--seed", f.seed, "Run seed");
  cmd->add_option("--out", f.out, "Output directory");
  cmd->add_option("--alpha", f.alpha, "Standard-deviation penalty");
  cmd->add_option("--env", f.env, "cartpole or pendulum");
  cmd->add_option("--multiplier", f.multiplier, "relative_mass or relative_length");
  cmd->add_option("--grid", f.grid, "Comma-separated multiplier values");
  cmd->add_option("--episodes", f.episodes, "Evaluation episodes (per grid point for sweeps)");
  cmd->add_option("--steps", f.steps, "Environment steps for training");
  cmd->add_option("--checkpoint", f.checkpoint, "Checkpoint to evaluate");
  cmd->add_option("--penalize-train", f.penalize_train, "Penalise during training (BOOL)");
  cmd->add_option("--penalize-test", f.penalize_test, "Penalise during evaluation (BOOL)");
  cmd->add_option("--set", f.set, "Override any key: KEY=VALUE (dotted path)");
  cmd->add_flag("--print-config", f.print_config, "Print the resolved configuration and exit");
}

rdrl::config::RunConfig resolve(const Flags& f) {
  std::optional<std::filesystem::path> file;
  if (f.config) file = *f.config;
  return rdrl::config::resolve(file, {rdrl::config::env_overrides(), f.overrides()});
}

void print_sweep(const rdrl::harness::SweepReport& rep) {
  std::printf("%-10s %12s %12s %12s\n", "multiplier", "mean", "std", "normalized");
  for (const auto& p : rep.points) {
    std::printf("%-10g %12.3f %12.3f %12.4f\n", p.multiplier, p.mean, p.std, p.normalized);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Risk-averse distributional RL: training, robustness sweeps and certification"};
  app.require_subcommand(1);
  Flags f;
  auto* train = app.add_subcommand("train", "Train an agent and write checkpoint, log and config");
  auto* sweep = app.add_subcommand("sweep", "Evaluate a checkpoint across a physics-multiplier grid");
  auto* ablate = app.add_subcommand("ablate", "Train/test penalisation matrix (full, train_only, test_only, none)");
  auto* verify = app.add_subcommand("verify-bound", "Randomised certification of the chi-square closed form");
  auto* tuning = app.add_subcommand("tuning-report", "Mean/variance ratio of final training returns");
  for (auto* cmd : {train, sweep, ablate, verify, tuning}) add_common(cmd, f);
  tuning->add_option("logs", f.logs, "Training log CSV files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    const auto cfg = resolve(f);
    if (f.print_config) {
      std::cout << rdrl::config::to_json(cfg);
      return 0;
    }
    if (train->parsed()) {
      const auto res = rdrl::harness::cmd_train(cfg);
      std::printf("episodes: %zu\nfinal evaluation mean: %s\ncheckpoint: %s\nlog: %s\n", res.log_table.rows.size(),
                  res.log_table.meta_value("final_eval_mean").c_str(), res.checkpoint.c_str(), res.log.c_str());
    } else if (sweep->parsed()) {
      print_sweep(rdrl::harness::cmd_sweep(cfg));
    } else if (ablate->parsed()) {
      for (const auto& rep : rdrl::harness::cmd_ablate(cfg)) {
        std::printf("[%s]\n", rep.label.c_str());
        print_sweep(rep);
      }
    } else if (verify->parsed()) {
      const auto res = rdrl::harness::cmd_verify_bound(cfg);
      std::printf("feasible cases: %zu, failures: %zu (boundary %zu, worst-case mean %zu)\n", res.feasible_cases,
                  res.feasible_failures, res.boundary_failures, res.worst_case_mean_failures);
      std::printf("beyond alpha_max: %zu, failures: %zu, strict lower bound: %zu\n", res.over_cases,
                  res.over_failures, res.strict_lower_bound_cases);
      std::printf("max |oracle - closed form| = %.3g, %.1fs\n", res.max_abs_error, res.seconds);
      return res.passed() ? 0 : 1;
    } else if (tuning->parsed()) {
      for (const auto& row : rdrl::harness::cmd_tuning_report(cfg)) {
        std::printf("%s: mean %.4g, variance %.4g, ratio %.4g\n  %s\n", row.log.c_str(), row.mean, row.variance,
                    row.ratio, row.guidance.c_str());
      }
    }
  } catch (const rdrl::ConfigError& e) {
    std::fprintf(stderr, "rdrl: configuration error: %s\n", e.what());
    return 2;
  } catch (const rdrl::InvalidArgument& e) {
    std::fprintf(stderr, "rdrl: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "rdrl: %s\n", e.what());
    return 3;
  }
  return 0;
}

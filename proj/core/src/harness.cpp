#include "rdrl/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "rdrl/errors.hpp"
#include "rdrl/qrdqn.hpp"
#include "rdrl/random.hpp"
#include "rdrl/tabular_robust.hpp"
#include "rdrl/tqc.hpp"

namespace rdrl::harness {

namespace fs = std::filesystem;
using config::EnvId;
using config::RunConfig;
using csv::format_double;

namespace {

std::string flag(bool b) { return b ? "true" : "false"; }

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  f << text;
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double pop_std(const std::vector<double>& v) {
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

double parse_double(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw InvalidArgument("not a number: '" + s + "'");
  return v;
}

// Alpha actually used by each phase. The continuous agent only penalises
// its actor objective, so it has no test-time penalty.
double alpha_eff_train(const RunConfig& c) { return c.penalize_train ? c.alpha : 0.0; }
double alpha_eff_test(const RunConfig& c) {
  return c.env == EnvId::CartPole && c.penalize_test ? c.alpha : 0.0;
}

void common_meta(csv::Table& t, const std::string& schema, const RunConfig& cfg) {
  t.add_meta("artifact_version", csv::kArtifactVersion);
  t.add_meta("schema", schema);
  t.add_meta("config_hash", config::config_hash(cfg));
  t.add_meta("seeds", std::to_string(cfg.seed));
}

}  // namespace

TrainOutputs cmd_train(const RunConfig& cfg) {
  cfg.validate();
  const fs::path out(cfg.out);
  fs::create_directories(out);
  const std::size_t steps = cfg.total_steps();

  TrainOutputs res;
  res.checkpoint = out / "checkpoint.bin";
  res.log = out / "train_log.csv";
  res.config = out / "config.json";

  csv::Table& t = res.log_table;
  Checkpoint ckpt;
  ckpt.metadata = config::to_json(cfg);
  std::vector<double> final_eval;

  if (cfg.env == EnvId::CartPole) {
    const auto qc = cfg.qrdqn_config();
    const auto run = qrdqn::run_training(cfg.cartpole, qc, cfg.seed, steps);
    common_meta(t, kQrdqnLogSchema, cfg);
    t.columns = {"step", "episode", "return", "loss", "epsilon", "alpha_eff_train", "alpha_eff_test"};
    for (const auto& r : run.log) {
      t.rows.push_back({std::to_string(r.step), std::to_string(r.episode), format_double(r.ret),
                        format_double(r.loss), format_double(r.epsilon), format_double(r.alpha_eff_train),
                        format_double(r.alpha_eff_test)});
    }
    final_eval = qrdqn::evaluate(run.network, cfg.cartpole, qc.alpha_eff_test(), cfg.eval_episodes, cfg.seed,
                                 qc.std_normalization);
    ckpt.blocks.push_back(qrdqn::to_block(run.network));
  } else {
    auto tc = cfg.tqc_config();
    tc.alpha = alpha_eff_train(cfg);
    const auto run = tqc::run_training(cfg.pendulum, tc, cfg.seed, steps);
    common_meta(t, kTqcLogSchema, cfg);
    t.columns = {"step", "episode", "return", "critic_loss", "actor_loss", "eta"};
    for (const auto& r : run.log) {
      t.rows.push_back({std::to_string(r.step), std::to_string(r.episode), format_double(r.ret),
                        format_double(r.critic_loss), format_double(r.actor_loss), format_double(r.eta)});
    }
    final_eval = tqc::evaluate(run.agent.policy, cfg.pendulum, cfg.eval_episodes, cfg.seed);
    ckpt.blocks = tqc::to_blocks(run.agent);
  }

  t.add_meta("env", config::to_string(cfg.env));
  t.add_meta("total_steps", std::to_string(steps));
  t.add_meta("alpha", format_double(cfg.alpha));
  t.add_meta("penalize_train", flag(cfg.penalize_train));
  t.add_meta("penalize_test", flag(cfg.penalize_test));
  t.add_meta("alpha_eff_train", format_double(alpha_eff_train(cfg)));
  t.add_meta("alpha_eff_test", format_double(alpha_eff_test(cfg)));
  t.add_meta("final_eval_episodes", std::to_string(final_eval.size()));
  t.add_meta("final_eval_mean", format_double(mean_of(final_eval)));
  t.add_meta("final_eval_std", format_double(pop_std(final_eval)));

  save_checkpoint(res.checkpoint, ckpt);
  csv::write_table(res.log, t);
  write_text(res.config, config::to_json(cfg));
  return res;
}

void SweepSpec::validate() const {
  if (grid.empty()) throw ConfigError("sweep grid must not be empty");
  for (double v : grid) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("sweep grid values must be positive");
  }
  if (episodes == 0) throw ConfigError("sweep episodes must be >= 1");
  if (!(alpha >= 0.0)) throw ConfigError("sweep alpha must be >= 0");
}

std::vector<double> normalize_curve(const std::vector<double>& means) {
  if (means.empty()) return {};
  const double hi = *std::max_element(means.begin(), means.end());
  const double lo = *std::min_element(means.begin(), means.end());
  std::vector<double> out(means.size());
  for (std::size_t i = 0; i < means.size(); ++i) {
    if (hi > 0.0) {
      out[i] = means[i] == hi ? 1.0 : means[i] / hi;
    } else if (hi > lo) {
      out[i] = (means[i] - lo) / (hi - lo);
    } else {
      out[i] = 1.0;
    }
  }
  return out;
}

std::uint64_t sweep_point_seed(std::uint64_t seed, std::size_t index) {
  return derive_seed(seed, 0x5377'0000ULL + index);
}

SweepSpec sweep_spec(const RunConfig& cfg, const Checkpoint& ckpt) {
  const RunConfig trained = config::from_json(ckpt.metadata);
  SweepSpec s;
  s.env = trained.env;
  s.multiplier = cfg.sweep.multiplier;
  s.grid = cfg.sweep.grid;
  s.episodes = cfg.sweep.episodes;
  s.checkpoint = cfg.checkpoint_path();
  s.penalize_test = cfg.penalize_test;
  s.alpha = cfg.sweep.alpha.value_or(trained.alpha);
  s.seed = cfg.sweep_seed();
  return s;
}

SweepReport run_sweep(const RunConfig& env_cfg, const SweepSpec& spec, const Checkpoint& ckpt) {
  spec.validate();
  const RunConfig trained = config::from_json(ckpt.metadata);
  if (trained.env != spec.env) throw ConfigError("checkpoint environment does not match the sweep");
  const double a_test = spec.env == EnvId::CartPole && spec.penalize_test ? spec.alpha : 0.0;

  SweepReport rep;
  std::vector<double> means;
  if (spec.env == EnvId::CartPole) {
    const auto qc = trained.qrdqn_config();
    const auto net = qrdqn::from_block(ckpt.block(qrdqn::kCheckpointBlock), envs::kCartPoleObsDim,
                                       envs::kCartPoleActions, qc);
    for (std::size_t i = 0; i < spec.grid.size(); ++i) {
      const auto params = envs::apply_perturbation(env_cfg.cartpole, spec.multiplier, spec.grid[i]);
      SweepPoint p;
      p.multiplier = spec.grid[i];
      p.returns = qrdqn::evaluate(net, params, a_test, spec.episodes, sweep_point_seed(spec.seed, i),
                                  qc.std_normalization);
      rep.points.push_back(std::move(p));
    }
  } else {
    const auto agent = tqc::from_blocks(ckpt, trained.tqc_config());
    for (std::size_t i = 0; i < spec.grid.size(); ++i) {
      const auto params = envs::apply_perturbation(env_cfg.pendulum, spec.multiplier, spec.grid[i]);
      SweepPoint p;
      p.multiplier = spec.grid[i];
      p.returns = tqc::evaluate(agent.policy, params, spec.episodes, sweep_point_seed(spec.seed, i));
      rep.points.push_back(std::move(p));
    }
  }
  for (auto& p : rep.points) {
    p.mean = mean_of(p.returns);
    p.std = pop_std(p.returns);
    p.min = *std::min_element(p.returns.begin(), p.returns.end());
    p.max = *std::max_element(p.returns.begin(), p.returns.end());
    means.push_back(p.mean);
  }
  const auto norm = normalize_curve(means);
  for (std::size_t i = 0; i < rep.points.size(); ++i) rep.points[i].normalized = norm[i];

  csv::Table& t = rep.table;
  t.add_meta("artifact_version", csv::kArtifactVersion);
  t.add_meta("schema", kSweepSchema);
  t.add_meta("config_hash", config::config_hash(env_cfg));
  t.add_meta("checkpoint_config_hash", config::config_hash(trained));
  t.add_meta("seeds", std::to_string(trained.seed) + ";" + std::to_string(spec.seed));
  t.add_meta("env", config::to_string(spec.env));
  t.add_meta("multiplier", spec.multiplier);
  t.add_meta("episodes_per_point", std::to_string(spec.episodes));
  t.add_meta("training_alpha", format_double(trained.alpha));
  t.add_meta("eval_alpha", format_double(spec.alpha));
  t.add_meta("penalize_train", flag(trained.penalize_train));
  t.add_meta("penalize_test", flag(spec.penalize_test));
  t.add_meta("alpha_eff_train", format_double(alpha_eff_train(trained)));
  t.add_meta("alpha_eff_test", format_double(a_test));
  t.columns = {"multiplier", "mean", "std", "min", "max", "normalized", "returns"};
  for (const auto& p : rep.points) {
    std::string rs;
    for (std::size_t k = 0; k < p.returns.size(); ++k) rs += (k ? ";" : "") + format_double(p.returns[k]);
    t.rows.push_back({format_double(p.multiplier), format_double(p.mean), format_double(p.std),
                      format_double(p.min), format_double(p.max), format_double(p.normalized), rs});
  }
  return rep;
}

SweepReport cmd_sweep(const RunConfig& cfg) {
  cfg.validate();
  const Checkpoint ckpt = load_checkpoint(cfg.checkpoint_path());
  SweepReport rep = run_sweep(cfg, sweep_spec(cfg, ckpt), ckpt);
  rep.label = "sweep";
  csv::write_table(fs::path(cfg.out) / "sweep.csv", rep.table);
  return rep;
}

std::vector<SweepReport> cmd_ablate(const RunConfig& cfg) {
  cfg.validate();
  if (cfg.env != EnvId::CartPole) {
    throw ConfigError("ablate needs the discrete agent (env = cartpole): the continuous agent has no test-time penalty");
  }
  std::vector<SweepReport> reports;
  std::size_t label = 0;
  for (bool train_flag : {true, false}) {
    RunConfig tc = cfg;
    tc.penalize_train = train_flag;
    tc.out = (fs::path(cfg.out) / (train_flag ? "train_penalized" : "train_plain")).string();
    tc.sweep.checkpoint.clear();
    const TrainOutputs trained = cmd_train(tc);
    const Checkpoint ckpt = load_checkpoint(trained.checkpoint);
    for (bool test_flag : {true, false}) {
      SweepSpec spec = sweep_spec(cfg, ckpt);
      spec.checkpoint = trained.checkpoint;
      spec.penalize_test = test_flag;
      spec.alpha = cfg.alpha;
      SweepReport rep = run_sweep(cfg, spec, ckpt);
      rep.label = kAblationLabels[label++];
      rep.table.meta.insert(rep.table.meta.begin() + 2, {"mode", rep.label});
      csv::write_table(fs::path(cfg.out) / ("ablate_" + rep.label + ".csv"), rep.table);
      reports.push_back(std::move(rep));
    }
  }
  return reports;
}

VerifyOutcome cmd_verify_bound(const RunConfig& cfg) {
  cfg.validate();
  const auto& v = cfg.verify;
  const auto t0 = std::chrono::steady_clock::now();
  VerifyOutcome res;
  csv::Table& t = res.table;
  common_meta(t, kVerifySchema, cfg);
  t.add_meta("verify_seed", std::to_string(v.seed));
  t.add_meta("tolerance", format_double(v.tolerance));
  t.add_meta("closed_form_bias", format_double(v.closed_form_bias));
  t.columns = {"case", "kind", "outcomes", "alpha", "alpha_max", "oracle", "closed_form", "surrogate",
               "abs_error", "worst_case_divergence_error", "worst_case_mean_error", "certified"};

  tabular::VerifyOptions opts;
  opts.closed_form_bias = v.closed_form_bias;
  constexpr double kBoundaryTol = 1e-8;

  const std::size_t total = v.cases + v.over_cases + v.zero_cases;
  for (std::size_t i = 0; i < total; ++i) {
    const char* kind = i < v.cases ? "feasible" : (i < v.cases + v.over_cases ? "beyond" : "zero");
    Rng rng(derive_seed(v.seed, i));
    std::uniform_int_distribution<std::size_t> count(v.min_outcomes, v.max_outcomes);
    std::exponential_distribution<double> expo(1.0);
    std::uniform_real_distribution<double> ret(-v.return_range, v.return_range);
    const std::size_t n = count(rng);
    std::vector<double> p(n), r(n);
    for (auto& x : p) x = expo(rng);
    const double s = std::accumulate(p.begin(), p.end(), 0.0);
    for (auto& x : p) x /= s;
    for (auto& x : r) x = ret(rng);
    const tabular::TrajectoryDistribution td(p, r);
    const double amax = tabular::alpha_max(td);
    if (!std::isfinite(amax)) throw NumericFault("verify: drew a case with constant returns");

    double alpha = 0.0;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    if (std::string(kind) == "feasible") {
      const double u = (i % 10 == 9) ? 1.0 : 1.0 - unit(rng);  // (0, 1]
      alpha = u * amax;
    } else if (std::string(kind) == "beyond") {
      alpha = amax * (1.05 + 3.0 * unit(rng));
    }

    const auto out = tabular::verify_eq1(td, alpha, v.tolerance, opts);
    bool ok = out.certified;
    double div_err = 0.0, mean_err = 0.0;
    const double closed = out.closed_form + v.closed_form_bias;
    if (std::string(kind) == "feasible") {
      ++res.feasible_cases;
      if (out.worst_case.size() > 0) {
        const auto q = out.worst_case.probs();
        div_err = std::abs(tabular::chi_square_divergence(q, p) - alpha);
        mean_err = std::abs(out.worst_case.mean() - out.exact_min);
        if (div_err > kBoundaryTol) {
          ++res.boundary_failures;
          ok = false;
        }
        if (mean_err > v.tolerance) {
          ++res.worst_case_mean_failures;
          ok = false;
        }
      }
      if (!ok) ++res.feasible_failures;
      res.max_abs_error = std::max(res.max_abs_error, std::abs(out.exact_min - closed));
    } else if (std::string(kind) == "beyond") {
      ++res.over_cases;
      if (!ok) ++res.over_failures;
      if (out.exact_min > closed + v.tolerance) ++res.strict_lower_bound_cases;
    } else {
      if (!ok) ++res.feasible_failures;
    }
    t.rows.push_back({std::to_string(i), kind, std::to_string(n), format_double(alpha), format_double(amax),
                      format_double(out.exact_min), format_double(closed), format_double(out.surrogate_form),
                      format_double(std::abs(out.exact_min - closed)), format_double(div_err),
                      format_double(mean_err), flag(ok)});
  }
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  t.add_meta("feasible_failures", std::to_string(res.feasible_failures));
  t.add_meta("beyond_failures", std::to_string(res.over_failures));
  t.add_meta("strict_lower_bound_cases", std::to_string(res.strict_lower_bound_cases));
  csv::write_table(fs::path(cfg.out) / "verify_bound.csv", t);
  return res;
}

std::string tuning_guidance(double ratio) {
  if (std::isinf(ratio)) return "returns did not vary: there is nothing for a penalty to act on; keep alpha at 0";
  if (!(ratio > 0.0)) return "mean return is not positive: the ratio does not indicate a penalty level here";
  if (ratio >= 75.0) return "returns are steady relative to their level: prefer small penalties (alpha up to about 2)";
  if (ratio >= 25.0) return "moderate fluctuation: try alpha in the middle of the range (about 1 to 3)";
  return "returns fluctuate strongly relative to their level: larger penalties (alpha up to about 5) are worth trying";
}

TuningRow tuning_statistics(const std::vector<double>& returns, std::size_t window) {
  if (returns.empty()) throw InvalidArgument("tuning report: the log has no episodes");
  if (window == 0) throw InvalidArgument("tuning report: window must be >= 1");
  const std::size_t k = std::min(window, returns.size());
  const std::vector<double> tail(returns.end() - static_cast<std::ptrdiff_t>(k), returns.end());
  TuningRow row;
  row.episodes = k;
  row.mean = mean_of(tail);
  double ss = 0.0;
  for (double x : tail) ss += (x - row.mean) * (x - row.mean);
  row.variance = ss / static_cast<double>(k);
  row.ratio = row.variance == 0.0 ? std::numeric_limits<double>::infinity() : row.mean / row.variance;
  row.guidance = tuning_guidance(row.ratio);
  return row;
}

std::vector<TuningRow> cmd_tuning_report(const RunConfig& cfg) {
  cfg.validate();
  if (cfg.tuning.logs.empty()) throw ConfigError("tuning-report needs at least one training log");
  std::vector<TuningRow> rows;
  csv::Table t;
  common_meta(t, kTuningSchema, cfg);
  t.add_meta("window", std::to_string(cfg.tuning.window));
  t.columns = {"log", "episodes", "mean", "variance", "ratio", "guidance"};
  for (const auto& log : cfg.tuning.logs) {
    const csv::Table table = csv::read_table(log);
    const std::size_t col = table.column("return");
    std::vector<double> returns;
    for (const auto& r : table.rows) returns.push_back(parse_double(r[col]));
    if (returns.empty()) throw InvalidArgument("tuning report: " + log + " has no episodes");
    TuningRow row = tuning_statistics(returns, cfg.tuning.window);
    row.log = log;
    t.rows.push_back({fs::path(log).filename().string(), std::to_string(row.episodes), format_double(row.mean),
                      format_double(row.variance), format_double(row.ratio), row.guidance});
    rows.push_back(std::move(row));
  }
  csv::write_table(fs::path(cfg.out) / "tuning_report.csv", t);
  return rows;
}

}  // namespace rdrl::harness

#include "rdrl/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "rdrl/errors.hpp"

extern char** environ;

namespace rdrl::config {

using nlohmann::json;

std::string to_string(EnvId env) { return env == EnvId::CartPole ? "cartpole" : "pendulum"; }

EnvId parse_env(const std::string& name) {
  if (name == "cartpole") return EnvId::CartPole;
  if (name == "pendulum") return EnvId::Pendulum;
  throw ConfigError("unknown env '" + name + "' (expected cartpole or pendulum)");
}

SweepSection::SweepSection() {
  for (int i = 5; i <= 20; ++i) grid.push_back(i / 10.0);
}

std::size_t RunConfig::total_steps() const {
  if (steps) return *steps;
  return env == EnvId::CartPole ? 50000 : 30000;
}

qrdqn::QrdqnConfig RunConfig::qrdqn_config() const {
  auto c = qrdqn;
  c.alpha = alpha;
  c.penalize_train = penalize_train;
  c.penalize_test = penalize_test;
  c.std_normalization = std_normalization;
  return c;
}

tqc::TqcConfig RunConfig::tqc_config() const {
  auto c = tqc;
  c.alpha = alpha;
  c.std_normalization = std_normalization;
  return c;
}

std::filesystem::path RunConfig::checkpoint_path() const {
  if (!sweep.checkpoint.empty()) return sweep.checkpoint;
  return std::filesystem::path(out) / "checkpoint.bin";
}

void RunConfig::validate() const {
  try {
    qrdqn_config().validate();
    tqc_config().validate();
    cartpole.validate();
    pendulum.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  if (eval_episodes == 0) throw ConfigError("eval_episodes must be >= 1");
  if (sweep.grid.empty()) throw ConfigError("sweep.grid must not be empty");
  for (double v : sweep.grid) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("sweep.grid values must be positive");
  }
  if (sweep.episodes == 0) throw ConfigError("sweep.episodes must be >= 1");
  if (sweep.alpha && !(*sweep.alpha >= 0.0)) throw ConfigError("sweep.alpha must be >= 0");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be >= 0");
  if (verify.min_outcomes < 2 || verify.max_outcomes < verify.min_outcomes) {
    throw ConfigError("verify: need 2 <= min_outcomes <= max_outcomes");
  }
  if (!(verify.tolerance > 0.0)) throw ConfigError("verify.tolerance must be positive");
  if (!(verify.return_range > 0.0)) throw ConfigError("verify.return_range must be positive");
  if (tuning.window == 0) throw ConfigError("tuning.window must be >= 1");
}

namespace {

std::string norm_name(quantile::StdNormalization n) {
  return n == quantile::StdNormalization::MeanSquare ? "mean_square" : "paper_literal";
}

quantile::StdNormalization parse_norm(const std::string& s) {
  if (s == "mean_square") return quantile::StdNormalization::MeanSquare;
  if (s == "paper_literal") return quantile::StdNormalization::PaperLiteral;
  throw ConfigError("unknown std_normalization '" + s + "'");
}

json cartpole_json(const envs::CartPoleParams& p) {
  return {{"cart_mass", p.cart_mass},     {"pole_mass", p.pole_mass},     {"pole_half_length", p.pole_half_length},
          {"gravity", p.gravity},         {"force_mag", p.force_mag},     {"dt", p.dt},
          {"angle_limit", p.angle_limit}, {"x_limit", p.x_limit},         {"max_steps", p.max_steps},
          {"relative_mass", p.relative_mass}, {"relative_length", p.relative_length}};
}

json pendulum_json(const envs::PendulumParams& p) {
  return {{"mass", p.mass},       {"length", p.length},     {"gravity", p.gravity},
          {"dt", p.dt},           {"torque_limit", p.torque_limit}, {"speed_limit", p.speed_limit},
          {"max_steps", p.max_steps}, {"relative_mass", p.relative_mass}};
}

json qrdqn_json(const qrdqn::QrdqnConfig& c) {
  return {{"n_quantiles", c.n_quantiles},
          {"kappa", c.kappa},
          {"lr", c.lr},
          {"batch", c.batch},
          {"gamma", c.gamma},
          {"target_update_interval", c.target_update_interval},
          {"target_polyak", c.target_polyak},
          {"buffer_capacity", c.buffer_capacity},
          {"epsilon_initial", c.epsilon_initial},
          {"epsilon_final", c.epsilon_final},
          {"exploration_fraction", c.exploration_fraction},
          {"gradient_steps", c.gradient_steps},
          {"train_freq", c.train_freq},
          {"learning_starts", c.learning_starts},
          {"max_grad_norm", c.max_grad_norm},
          {"hidden", c.hidden},
          {"eval_interval", c.eval_interval},
          {"eval_episodes", c.eval_episodes}};
}

json tqc_json(const tqc::TqcConfig& c) {
  return {{"n_critics", c.n_critics},
          {"n_quantiles", c.n_quantiles},
          {"drop_per_critic", c.drop_per_critic},
          {"kappa", c.kappa},
          {"gamma", c.gamma},
          {"beta", c.beta},
          {"batch", c.batch},
          {"lr_initial", c.lr_initial},
          {"lr_final", c.lr_final},
          {"entropy_target", c.entropy_target ? json(*c.entropy_target) : json(nullptr)},
          {"buffer_capacity", c.buffer_capacity},
          {"critic_hidden", c.critic_hidden},
          {"actor_hidden", c.actor_hidden},
          {"eta_initial", c.eta_initial},
          {"log_std_min", c.log_std_min},
          {"log_std_max", c.log_std_max},
          {"learning_starts", c.learning_starts},
          {"gradient_steps", c.gradient_steps},
          {"train_freq", c.train_freq}};
}

json to_object(const RunConfig& c) {
  json j;
  j["env"] = to_string(c.env);
  j["seed"] = c.seed;
  j["out"] = c.out;
  j["steps"] = c.steps ? json(*c.steps) : json(nullptr);
  j["alpha"] = c.alpha;
  j["penalize_train"] = c.penalize_train;
  j["penalize_test"] = c.penalize_test;
  j["std_normalization"] = norm_name(c.std_normalization);
  j["eval_episodes"] = c.eval_episodes;
  j["cartpole"] = cartpole_json(c.cartpole);
  j["pendulum"] = pendulum_json(c.pendulum);
  j["qrdqn"] = qrdqn_json(c.qrdqn);
  j["tqc"] = tqc_json(c.tqc);
  j["sweep"] = {{"multiplier", c.sweep.multiplier},
                {"grid", c.sweep.grid},
                {"episodes", c.sweep.episodes},
                {"checkpoint", c.sweep.checkpoint},
                {"seed", c.sweep.seed},
                {"alpha", c.sweep.alpha ? json(*c.sweep.alpha) : json(nullptr)}};
  j["verify"] = {{"cases", c.verify.cases},
                 {"over_cases", c.verify.over_cases},
                 {"zero_cases", c.verify.zero_cases},
                 {"seed", c.verify.seed},
                 {"tolerance", c.verify.tolerance},
                 {"min_outcomes", c.verify.min_outcomes},
                 {"max_outcomes", c.verify.max_outcomes},
                 {"return_range", c.verify.return_range},
                 {"closed_form_bias", c.verify.closed_form_bias}};
  j["tuning"] = {{"window", c.tuning.window}, {"logs", c.tuning.logs}};
  return j;
}

// Settings whose default is null accept a value of any scalar type.
bool nullable(const std::string& path) { return path == "steps" || path == "tqc.entropy_target" || path == "sweep.alpha";
}

void merge(json& base, const json& patch, const std::string& prefix) {
  if (!patch.is_object()) throw ConfigError("configuration must be a JSON object" + (prefix.empty() ? "" : " at " + prefix));
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown configuration key '" + path + "'");
    json& slot = base[it.key()];
    if (slot.is_object()) {
      merge(slot, it.value(), path);
    } else if (nullable(path) || slot.type() == it.value().type() ||
               (slot.is_number() && it.value().is_number())) {
      slot = it.value();
    } else {
      throw ConfigError("configuration key '" + path + "' has the wrong type");
    }
  }
}

template <class T>
T get(const json& j, const char* key, const std::string& section) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("configuration key '" + (section.empty() ? "" : section + ".") + key +
                      "' has an invalid value");
  }
}

std::size_t get_count(const json& j, const char* key, const std::string& section) {
  const json& v = j.at(key);
  if (!v.is_number_integer() || (v.is_number_integer() && v.get<long long>() < 0 && !v.is_number_unsigned())) {
    throw ConfigError("configuration key '" + (section.empty() ? "" : section + ".") + key +
                      "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

RunConfig from_object(const json& j) {
  RunConfig c;
  c.env = parse_env(get<std::string>(j, "env", ""));
  if (!j.at("seed").is_number_integer() || (j.at("seed").get<long long>() < 0 && !j.at("seed").is_number_unsigned())) {
    throw ConfigError("configuration key 'seed' must be a non-negative integer");
  }
  c.seed = j.at("seed").get<std::uint64_t>();
  c.out = get<std::string>(j, "out", "");
  if (!j.at("steps").is_null()) c.steps = get_count(j, "steps", "");
  c.alpha = get<double>(j, "alpha", "");
  c.penalize_train = get<bool>(j, "penalize_train", "");
  c.penalize_test = get<bool>(j, "penalize_test", "");
  c.std_normalization = parse_norm(get<std::string>(j, "std_normalization", ""));
  c.eval_episodes = get_count(j, "eval_episodes", "");

  const json& cp = j.at("cartpole");
  const std::string cps = "cartpole";
  c.cartpole.cart_mass = get<double>(cp, "cart_mass", cps);
  c.cartpole.pole_mass = get<double>(cp, "pole_mass", cps);
  c.cartpole.pole_half_length = get<double>(cp, "pole_half_length", cps);
  c.cartpole.gravity = get<double>(cp, "gravity", cps);
  c.cartpole.force_mag = get<double>(cp, "force_mag", cps);
  c.cartpole.dt = get<double>(cp, "dt", cps);
  c.cartpole.angle_limit = get<double>(cp, "angle_limit", cps);
  c.cartpole.x_limit = get<double>(cp, "x_limit", cps);
  c.cartpole.max_steps = get_count(cp, "max_steps", cps);
  c.cartpole.relative_mass = get<double>(cp, "relative_mass", cps);
  c.cartpole.relative_length = get<double>(cp, "relative_length", cps);

  const json& pd = j.at("pendulum");
  const std::string pds = "pendulum";
  c.pendulum.mass = get<double>(pd, "mass", pds);
  c.pendulum.length = get<double>(pd, "length", pds);
  c.pendulum.gravity = get<double>(pd, "gravity", pds);
  c.pendulum.dt = get<double>(pd, "dt", pds);
  c.pendulum.torque_limit = get<double>(pd, "torque_limit", pds);
  c.pendulum.speed_limit = get<double>(pd, "speed_limit", pds);
  c.pendulum.max_steps = get_count(pd, "max_steps", pds);
  c.pendulum.relative_mass = get<double>(pd, "relative_mass", pds);

  const json& q = j.at("qrdqn");
  const std::string qs = "qrdqn";
  c.qrdqn.n_quantiles = get_count(q, "n_quantiles", qs);
  c.qrdqn.kappa = get<double>(q, "kappa", qs);
  c.qrdqn.lr = get<double>(q, "lr", qs);
  c.qrdqn.batch = get_count(q, "batch", qs);
  c.qrdqn.gamma = get<double>(q, "gamma", qs);
  c.qrdqn.target_update_interval = get_count(q, "target_update_interval", qs);
  c.qrdqn.target_polyak = get<double>(q, "target_polyak", qs);
  c.qrdqn.buffer_capacity = get_count(q, "buffer_capacity", qs);
  c.qrdqn.epsilon_initial = get<double>(q, "epsilon_initial", qs);
  c.qrdqn.epsilon_final = get<double>(q, "epsilon_final", qs);
  c.qrdqn.exploration_fraction = get<double>(q, "exploration_fraction", qs);
  c.qrdqn.gradient_steps = get_count(q, "gradient_steps", qs);
  c.qrdqn.train_freq = get_count(q, "train_freq", qs);
  c.qrdqn.learning_starts = get_count(q, "learning_starts", qs);
  c.qrdqn.max_grad_norm = get<double>(q, "max_grad_norm", qs);
  c.qrdqn.hidden = get<std::vector<std::size_t>>(q, "hidden", qs);
  c.qrdqn.eval_interval = get_count(q, "eval_interval", qs);
  c.qrdqn.eval_episodes = get_count(q, "eval_episodes", qs);

  const json& t = j.at("tqc");
  const std::string ts = "tqc";
  c.tqc.n_critics = get_count(t, "n_critics", ts);
  c.tqc.n_quantiles = get_count(t, "n_quantiles", ts);
  c.tqc.drop_per_critic = get_count(t, "drop_per_critic", ts);
  c.tqc.kappa = get<double>(t, "kappa", ts);
  c.tqc.gamma = get<double>(t, "gamma", ts);
  c.tqc.beta = get<double>(t, "beta", ts);
  c.tqc.batch = get_count(t, "batch", ts);
  c.tqc.lr_initial = get<double>(t, "lr_initial", ts);
  c.tqc.lr_final = get<double>(t, "lr_final", ts);
  if (t.at("entropy_target").is_null()) {
    c.tqc.entropy_target.reset();
  } else {
    c.tqc.entropy_target = get<double>(t, "entropy_target", ts);
  }
  c.tqc.buffer_capacity = get_count(t, "buffer_capacity", ts);
  c.tqc.critic_hidden = get<std::vector<std::size_t>>(t, "critic_hidden", ts);
  c.tqc.actor_hidden = get<std::vector<std::size_t>>(t, "actor_hidden", ts);
  c.tqc.eta_initial = get<double>(t, "eta_initial", ts);
  c.tqc.log_std_min = get<double>(t, "log_std_min", ts);
  c.tqc.log_std_max = get<double>(t, "log_std_max", ts);
  c.tqc.learning_starts = get_count(t, "learning_starts", ts);
  c.tqc.gradient_steps = get_count(t, "gradient_steps", ts);
  c.tqc.train_freq = get_count(t, "train_freq", ts);

  const json& s = j.at("sweep");
  c.sweep.multiplier = get<std::string>(s, "multiplier", "sweep");
  c.sweep.grid = get<std::vector<double>>(s, "grid", "sweep");
  c.sweep.episodes = get_count(s, "episodes", "sweep");
  c.sweep.checkpoint = get<std::string>(s, "checkpoint", "sweep");
  c.sweep.seed = get<std::uint64_t>(s, "seed", "sweep");
  if (!s.at("alpha").is_null()) c.sweep.alpha = get<double>(s, "alpha", "sweep");

  const json& v = j.at("verify");
  c.verify.cases = get_count(v, "cases", "verify");
  c.verify.over_cases = get_count(v, "over_cases", "verify");
  c.verify.zero_cases = get_count(v, "zero_cases", "verify");
  c.verify.seed = get<std::uint64_t>(v, "seed", "verify");
  c.verify.tolerance = get<double>(v, "tolerance", "verify");
  c.verify.min_outcomes = get_count(v, "min_outcomes", "verify");
  c.verify.max_outcomes = get_count(v, "max_outcomes", "verify");
  c.verify.return_range = get<double>(v, "return_range", "verify");
  c.verify.closed_form_bias = get<double>(v, "closed_form_bias", "verify");

  const json& tu = j.at("tuning");
  c.tuning.window = get_count(tu, "window", "tuning");
  c.tuning.logs = get<std::vector<std::string>>(tu, "logs", "tuning");

  c.validate();
  return c;
}

json parse_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return json(text);
  }
}

json nest(const std::string& path, json value) {
  json out = std::move(value);
  std::string rest = path;
  for (;;) {
    const auto dot = rest.rfind('.');
    const std::string key = dot == std::string::npos ? rest : rest.substr(dot + 1);
    if (key.empty()) throw ConfigError("malformed configuration key '" + path + "'");
    out = json{{key, std::move(out)}};
    if (dot == std::string::npos) break;
    rest = rest.substr(0, dot);
  }
  return out;
}

}  // namespace

std::string to_json(const RunConfig& cfg) { return to_object(cfg).dump(2) + "\n"; }

RunConfig from_json(const std::string& text) {
  json patch;
  try {
    patch = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("configuration is not valid JSON: ") + e.what());
  }
  json base = to_object(RunConfig{});
  merge(base, patch, "");
  return from_object(base);
}

std::string config_hash(const RunConfig& cfg) {
  json j = to_object(cfg);
  j.erase("out");
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Overrides env_overrides(const std::vector<std::string>& environment) {
  Overrides out;
  const std::string prefix = kEnvPrefix;
  for (const auto& entry : environment) {
    if (entry.rfind(prefix, 0) != 0) continue;
    const auto eq = entry.find('=');
    if (eq == std::string::npos) continue;
    std::string key = entry.substr(prefix.size(), eq - prefix.size());
    std::transform(key.begin(), key.end(), key.begin(), [](unsigned char ch) { return std::tolower(ch); });
    std::string path;
    for (std::size_t i = 0; i < key.size(); ++i) {
      if (key[i] == '_' && i + 1 < key.size() && key[i + 1] == '_') {
        path += '.';
        ++i;
      } else {
        path += key[i];
      }
    }
    out[path] = entry.substr(eq + 1);
  }
  return out;
}

Overrides env_overrides() {
  std::vector<std::string> env;
  for (char** e = environ; e && *e; ++e) env.emplace_back(*e);
  return env_overrides(env);
}

RunConfig resolve(const std::optional<std::filesystem::path>& file, const std::vector<Overrides>& layers) {
  json base = to_object(RunConfig{});
  if (file) {
    std::ifstream f(*file, std::ios::binary);
    if (!f) throw ConfigError("cannot open configuration file " + file->string());
    std::ostringstream ss;
    ss << f.rdbuf();
    json patch;
    try {
      patch = json::parse(ss.str());
    } catch (const json::parse_error& e) {
      throw ConfigError(file->string() + " is not valid JSON: " + e.what());
    }
    merge(base, patch, "");
  }
  for (const auto& layer : layers) {
    for (const auto& [path, value] : layer) merge(base, nest(path, parse_value(value)), "");
  }
  return from_object(base);
}

}  // namespace rdrl::config

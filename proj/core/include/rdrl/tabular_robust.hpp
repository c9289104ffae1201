#pragma once

// Exact tabular machinery: Bellman evaluation/optimality on small MDPs,
// trajectory return enumeration, and the chi-square worst-case value
// reduction min_{D(P||P0) <= alpha} E_P[R] together with an independent
// numerical certifier.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace rdrl::tabular {

/// Finite MDP with deterministic (s, a) rewards.
///
/// `transition` is flattened row-major over (s, a, s'), `reward` over (s, a).
struct TabularMDP {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::vector<double> transition;
  std::vector<double> reward;
  double gamma = 0.9;
  std::size_t horizon = 1;

  double p(std::size_t s, std::size_t a, std::size_t next) const {
    return transition[(s * n_actions + a) * n_states + next];
  }
  double r(std::size_t s, std::size_t a) const { return reward[s * n_actions + a]; }

  /// Throws InvalidArgument when shapes or probability rows are inconsistent.
  void validate() const;
};

struct TabularPolicy {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::vector<double> probs;  // (s, a)

  double prob(std::size_t s, std::size_t a) const { return probs[s * n_actions + a]; }

  static TabularPolicy uniform(std::size_t n_states, std::size_t n_actions);
  void validate(const TabularMDP& mdp) const;
};

/// Q-values indexed (s, a), row-major.
struct QTable {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::vector<double> values;
  std::size_t iterations = 0;
  double residual = 0.0;

  double operator()(std::size_t s, std::size_t a) const { return values[s * n_actions + a]; }
};

struct Outcome {
  double prob = 0.0;
  double ret = 0.0;
};

/// Finite law over trajectory outcomes: nominal probabilities and returns.
class TrajectoryDistribution {
 public:
  TrajectoryDistribution() = default;
  explicit TrajectoryDistribution(std::vector<Outcome> outcomes);
  TrajectoryDistribution(std::span<const double> probs, std::span<const double> returns);

  const std::vector<Outcome>& outcomes() const { return outcomes_; }
  std::size_t size() const { return outcomes_.size(); }
  std::vector<double> probs() const;
  std::vector<double> returns() const;
  double mean() const;

 private:
  std::vector<Outcome> outcomes_;
};

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();
inline constexpr std::size_t kDefaultEnumerationCap = 1'000'000;

QTable policy_evaluation(const TabularMDP& mdp, const TabularPolicy& policy, double tol,
                         std::size_t max_iterations = 1'000'000);
QTable value_iteration(const TabularMDP& mdp, double tol,
                       std::size_t max_iterations = 1'000'000);

/// Enumerates every length-`mdp.horizon` rollout starting with (s0, a0).
/// The return is sum_{t < horizon} gamma^t r(s_t, a_t); zero-probability
/// branches are pruned.
TrajectoryDistribution enumerate_return_distribution(const TabularMDP& mdp,
                                                     const TabularPolicy& policy,
                                                     std::size_t s0, std::size_t a0,
                                                     std::size_t cap = kDefaultEnumerationCap);

std::vector<double> centered_returns(const TrajectoryDistribution& td);
double return_variance(const TrajectoryDistribution& td);

/// sum_{i: p0_i > 0} p0_i (q_i / p0_i - 1)^2. Throws DomainError when q puts
/// mass where p0 has none.
double chi_square_divergence(std::span<const double> q, std::span<const double> p0);

/// V / ||R~||_inf^2 over the support of td; +inf when V == 0.
double alpha_max(const TrajectoryDistribution& td);

/// Cauchy-Schwarz equality-case measure p = p0 (1 + R~ / lambda),
/// lambda = -sqrt(V / alpha). Throws FeasibilityError for alpha > alpha_max.
TrajectoryDistribution worst_case_distribution(const TrajectoryDistribution& td, double alpha);

/// E0[R] - sqrt(alpha V): exact minimum of the chi-square ball problem for
/// alpha <= alpha_max, a lower bound beyond.
double closed_form_value(const TrajectoryDistribution& td, double alpha);

/// E0[R] - alpha sqrt(V): penalty with the radius read as alpha^2.
double surrogate_form_value(const TrajectoryDistribution& td, double alpha);

struct OracleConfig {
  std::uint64_t seed = 0x5eedULL;
  /// Augmented-Lagrangian cross-check starts (0 disables).
  std::size_t restarts = 4;
  std::size_t max_outer_iterations = 60;
  std::size_t max_inner_iterations = 4000;
  double feasibility_tol = 1e-12;
};

struct OracleResult {
  double value = 0.0;
  double divergence = 0.0;
  std::vector<double> q;  // minimizer over all outcomes (zeros off support)
  bool certified = true;
  std::string method;
};

/// Numerical min of sum_i q_i R_i over the chi-square ball of radius alpha.
/// Independent of the closed form: KKT water-filling solved by nested
/// bisection, cross-checked by multi-start augmented-Lagrangian projected
/// gradient.
OracleResult robust_value_oracle(const TrajectoryDistribution& td, double alpha,
                                 const OracleConfig& cfg = {});

struct ChiSquareBallResult {
  double alpha = 0.0;
  double exact_min = 0.0;
  double closed_form = 0.0;
  double surrogate_form = 0.0;
  double alpha_max = 0.0;
  TrajectoryDistribution worst_case;  // only populated when feasible and V > 0
  double oracle_divergence = 0.0;
  bool feasible = false;
  bool certified = false;
  std::string report;  // empty when certified
};

struct VerifyOptions {
  OracleConfig oracle;
  /// Test hook: added to the closed form before comparison.
  double closed_form_bias = 0.0;
};

/// Certifies the closed form against the oracle. Failures are reported in
/// the result, never thrown.
ChiSquareBallResult verify_eq1(const TrajectoryDistribution& td, double alpha, double tol,
                               const VerifyOptions& opts = {});

}  // namespace rdrl::tabular

#include "rdrl/tabular_robust.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "rdrl/errors.hpp"

namespace rdrl::tabular {

namespace {

constexpr double kRowTol = 1e-12;
constexpr double kDistTol = 1e-10;

void check_row(std::span<const double> row, const char* what) {
  double sum = 0.0;
  for (double v : row) {
    if (!std::isfinite(v) || v < 0.0) {
      throw InvalidArgument(std::string(what) + ": entries must be finite and non-negative");
    }
    sum += v;
  }
  if (std::abs(sum - 1.0) > kRowTol) {
    std::ostringstream os;
    os << what << ": row sums to " << sum << ", expected 1";
    throw InvalidArgument(os.str());
  }
}

// Mean and centered returns restricted to the support of td.
struct Centered {
  double mean = 0.0;
  double variance = 0.0;
  double sup_norm = 0.0;  // max |R~| over the support
  std::vector<double> centered;
};

Centered center(const TrajectoryDistribution& td) {
  Centered c;
  for (const auto& o : td.outcomes()) c.mean += o.prob * o.ret;
  c.centered.reserve(td.size());
  for (const auto& o : td.outcomes()) {
    const double d = o.ret - c.mean;
    c.centered.push_back(d);
    if (o.prob > 0.0) {
      c.variance += o.prob * d * d;
      c.sup_norm = std::max(c.sup_norm, std::abs(d));
    }
  }
  return c;
}

// Constant returns on the support, up to rounding in the mean.
bool degenerate(const Centered& c) {
  return c.sup_norm <= 1e-12 * std::max(1.0, std::abs(c.mean));
}

}  // namespace

void TabularMDP::validate() const {
  if (n_states == 0 || n_actions == 0) throw InvalidArgument("MDP needs at least one state and action");
  if (transition.size() != n_states * n_actions * n_states) {
    throw InvalidArgument("transition table must have n_states*n_actions*n_states entries");
  }
  if (reward.size() != n_states * n_actions) {
    throw InvalidArgument("reward table must have n_states*n_actions entries");
  }
  if (!(gamma > 0.0 && gamma < 1.0)) throw InvalidArgument("gamma must lie in (0, 1)");
  if (horizon < 1) throw InvalidArgument("horizon must be >= 1");
  for (double r : reward) {
    if (!std::isfinite(r)) throw InvalidArgument("rewards must be finite");
  }
  for (std::size_t sa = 0; sa < n_states * n_actions; ++sa) {
    check_row(std::span(transition).subspan(sa * n_states, n_states), "transition");
  }
}

TabularPolicy TabularPolicy::uniform(std::size_t n_states, std::size_t n_actions) {
  TabularPolicy pi;
  pi.n_states = n_states;
  pi.n_actions = n_actions;
  pi.probs.assign(n_states * n_actions, 1.0 / static_cast<double>(n_actions));
  return pi;
}

void TabularPolicy::validate(const TabularMDP& mdp) const {
  if (n_states != mdp.n_states || n_actions != mdp.n_actions ||
      probs.size() != n_states * n_actions) {
    throw InvalidArgument("policy shape does not match MDP");
  }
  for (std::size_t s = 0; s < n_states; ++s) {
    check_row(std::span(probs).subspan(s * n_actions, n_actions), "policy");
  }
}

TrajectoryDistribution::TrajectoryDistribution(std::vector<Outcome> outcomes)
    : outcomes_(std::move(outcomes)) {
  if (outcomes_.empty()) throw InvalidArgument("trajectory distribution must be non-empty");
  double sum = 0.0;
  for (const auto& o : outcomes_) {
    if (!std::isfinite(o.prob) || o.prob < 0.0 || !std::isfinite(o.ret)) {
      throw InvalidArgument("outcome probabilities must be non-negative and returns finite");
    }
    sum += o.prob;
  }
  if (std::abs(sum - 1.0) > kDistTol) {
    std::ostringstream os;
    os << "outcome probabilities sum to " << sum << ", expected 1";
    throw InvalidArgument(os.str());
  }
}

TrajectoryDistribution::TrajectoryDistribution(std::span<const double> probs,
                                               std::span<const double> returns)
    : TrajectoryDistribution([&] {
        if (probs.size() != returns.size()) throw InvalidArgument("probs/returns size mismatch");
        std::vector<Outcome> out(probs.size());
        for (std::size_t i = 0; i < probs.size(); ++i) out[i] = {probs[i], returns[i]};
        return out;
      }()) {}

std::vector<double> TrajectoryDistribution::probs() const {
  std::vector<double> p;
  p.reserve(outcomes_.size());
  for (const auto& o : outcomes_) p.push_back(o.prob);
  return p;
}

std::vector<double> TrajectoryDistribution::returns() const {
  std::vector<double> r;
  r.reserve(outcomes_.size());
  for (const auto& o : outcomes_) r.push_back(o.ret);
  return r;
}

double TrajectoryDistribution::mean() const {
  double m = 0.0;
  for (const auto& o : outcomes_) m += o.prob * o.ret;
  return m;
}

namespace {

template <class Backup>
QTable iterate_to_fixed_point(const TabularMDP& mdp, double tol, std::size_t max_iterations,
                              Backup&& next_value) {
  if (!(tol > 0.0)) throw InvalidArgument("tol must be positive");
  const std::size_t S = mdp.n_states, A = mdp.n_actions;
  QTable q{S, A, std::vector<double>(S * A, 0.0), 0, 0.0};
  std::vector<double> v(S), updated(S * A);
  for (std::size_t it = 0; it < max_iterations; ++it) {
    for (std::size_t s = 0; s < S; ++s) v[s] = next_value(q, s);
    double residual = 0.0;
    for (std::size_t s = 0; s < S; ++s) {
      for (std::size_t a = 0; a < A; ++a) {
        double expect = 0.0;
        for (std::size_t n = 0; n < S; ++n) expect += mdp.p(s, a, n) * v[n];
        const double t = mdp.r(s, a) + mdp.gamma * expect;
        residual = std::max(residual, std::abs(t - q.values[s * A + a]));
        updated[s * A + a] = t;
      }
    }
    q.values.swap(updated);
    q.iterations = it + 1;
    q.residual = residual;
    // Residual was measured on the previous iterate; the returned one is a
    // gamma-contraction closer to the fixed point.
    if (residual <= tol) return q;
    if (!std::isfinite(residual)) break;
  }
  std::ostringstream os;
  os << "Bellman iteration did not reach tol " << tol << " within " << max_iterations
     << " iterations (residual " << q.residual << ")";
  throw ConvergenceError(os.str());
}

}  // namespace

QTable policy_evaluation(const TabularMDP& mdp, const TabularPolicy& policy, double tol,
                         std::size_t max_iterations) {
  mdp.validate();
  policy.validate(mdp);
  return iterate_to_fixed_point(mdp, tol, max_iterations, [&](const QTable& q, std::size_t s) {
    double v = 0.0;
    for (std::size_t a = 0; a < mdp.n_actions; ++a) v += policy.prob(s, a) * q(s, a);
    return v;
  });
}

QTable value_iteration(const TabularMDP& mdp, double tol, std::size_t max_iterations) {
  mdp.validate();
  return iterate_to_fixed_point(mdp, tol, max_iterations, [&](const QTable& q, std::size_t s) {
    double v = q(s, 0);
    for (std::size_t a = 1; a < mdp.n_actions; ++a) v = std::max(v, q(s, a));
    return v;
  });
}

TrajectoryDistribution enumerate_return_distribution(const TabularMDP& mdp,
                                                     const TabularPolicy& policy,
                                                     std::size_t s0, std::size_t a0,
                                                     std::size_t cap) {
  mdp.validate();
  policy.validate(mdp);
  if (s0 >= mdp.n_states || a0 >= mdp.n_actions) throw InvalidArgument("start pair out of range");

  struct Node {
    std::size_t s, a;
    double prob, ret;
  };
  std::vector<Node> frontier{{s0, a0, 1.0, mdp.r(s0, a0)}};
  std::vector<Node> next;
  double discount = 1.0;
  for (std::size_t t = 1; t < mdp.horizon; ++t) {
    discount *= mdp.gamma;
    next.clear();
    for (const Node& n : frontier) {
      for (std::size_t s = 0; s < mdp.n_states; ++s) {
        const double ps = mdp.p(n.s, n.a, s);
        if (ps == 0.0) continue;
        for (std::size_t a = 0; a < mdp.n_actions; ++a) {
          const double pa = policy.prob(s, a);
          if (pa == 0.0) continue;
          if (next.size() >= cap) {
            std::ostringstream os;
            os << "trajectory enumeration exceeds cap of " << cap << " outcomes at depth " << t;
            throw SizeError(os.str());
          }
          next.push_back({s, a, n.prob * ps * pa, n.ret + discount * mdp.r(s, a)});
        }
      }
    }
    frontier.swap(next);
  }

  std::vector<Outcome> outcomes;
  outcomes.reserve(frontier.size());
  for (const Node& n : frontier) outcomes.push_back({n.prob, n.ret});
  return TrajectoryDistribution(std::move(outcomes));
}

std::vector<double> centered_returns(const TrajectoryDistribution& td) {
  const double m = td.mean();
  std::vector<double> out;
  out.reserve(td.size());
  for (const auto& o : td.outcomes()) out.push_back(o.ret - m);
  return out;
}

double return_variance(const TrajectoryDistribution& td) { return center(td).variance; }

double chi_square_divergence(std::span<const double> q, std::span<const double> p0) {
  if (q.size() != p0.size()) throw InvalidArgument("chi-square: size mismatch");
  double d = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (p0[i] > 0.0) {
      const double ratio = q[i] / p0[i] - 1.0;
      d += p0[i] * ratio * ratio;
    } else if (q[i] > 0.0) {
      std::ostringstream os;
      os << "chi-square: q[" << i << "] = " << q[i]
         << " on an outcome with zero nominal probability (q must be absolutely continuous)";
      throw DomainError(os.str());
    }
  }
  return d;
}

double alpha_max(const TrajectoryDistribution& td) {
  const Centered c = center(td);
  if (degenerate(c)) return kInfinity;
  return c.variance / (c.sup_norm * c.sup_norm);
}

TrajectoryDistribution worst_case_distribution(const TrajectoryDistribution& td, double alpha) {
  const Centered c = center(td);
  if (!(alpha > 0.0)) throw InvalidArgument("worst_case_distribution: alpha must be positive");
  if (degenerate(c)) throw DomainError("worst_case_distribution: returns have zero variance");
  const double amax = c.variance / (c.sup_norm * c.sup_norm);
  if (alpha > amax * (1.0 + 1e-12)) {
    std::ostringstream os;
    os << "alpha " << alpha << " exceeds alpha_max " << amax
       << "; the equality-case measure would be negative";
    throw FeasibilityError(os.str());
  }
  // lambda = -sqrt(V / alpha)  =>  1 / lambda = -sqrt(alpha / V)
  const double inv_lambda = -std::sqrt(alpha / c.variance);
  std::vector<Outcome> out;
  out.reserve(td.size());
  for (std::size_t i = 0; i < td.size(); ++i) {
    const auto& o = td.outcomes()[i];
    double p = o.prob * (1.0 + inv_lambda * c.centered[i]);
    if (p < 0.0) p = 0.0;  // rounding at the alpha_max boundary
    out.push_back({p, o.ret});
  }
  return TrajectoryDistribution(std::move(out));
}

double closed_form_value(const TrajectoryDistribution& td, double alpha) {
  const Centered c = center(td);
  if (degenerate(c)) return c.mean;
  return c.mean - std::sqrt(alpha * c.variance);
}

double surrogate_form_value(const TrajectoryDistribution& td, double alpha) {
  const Centered c = center(td);
  if (degenerate(c)) return c.mean;
  return c.mean - alpha * std::sqrt(c.variance);
}

ChiSquareBallResult verify_eq1(const TrajectoryDistribution& td, double alpha, double tol,
                               const VerifyOptions& opts) {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw InvalidArgument("alpha must be >= 0");
  if (!(tol > 0.0)) throw InvalidArgument("tol must be positive");

  ChiSquareBallResult res;
  res.alpha = alpha;
  res.alpha_max = alpha_max(td);
  res.closed_form = closed_form_value(td, alpha) + opts.closed_form_bias;
  res.surrogate_form = surrogate_form_value(td, alpha);

  if (res.alpha_max == kInfinity) {
    // Every feasible P has the same expectation.
    res.exact_min = td.mean();
    res.feasible = true;
    res.oracle_divergence = 0.0;
  } else {
    const OracleResult oracle = robust_value_oracle(td, alpha, opts.oracle);
    res.exact_min = oracle.value;
    res.oracle_divergence = oracle.divergence;
    res.feasible = alpha <= res.alpha_max;
    if (!oracle.certified) {
      res.report = "oracle did not converge; best-so-far value is not certified";
    }
    if (res.feasible && alpha > 0.0) res.worst_case = worst_case_distribution(td, alpha);
  }

  std::ostringstream os;
  if (res.feasible) {
    const double gap = std::abs(res.exact_min - res.closed_form);
    if (gap > tol) {
      os << "feasible alpha " << alpha << ": |exact_min - closed_form| = " << gap << " > tol "
         << tol << " (exact_min " << res.exact_min << ", closed_form " << res.closed_form << ")";
    }
  } else if (res.exact_min < res.closed_form - tol) {
    os << "alpha " << alpha << " > alpha_max " << res.alpha_max << ": exact_min "
       << res.exact_min << " below lower bound " << res.closed_form;
  }
  if (!os.str().empty()) {
    res.report = res.report.empty() ? os.str() : res.report + "; " + os.str();
  }
  res.certified = res.report.empty();
  return res;
}

}  // namespace rdrl::tabular

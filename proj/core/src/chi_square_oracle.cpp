// Numerical minimisation of a linear functional over the chi-square ball
//   { q in simplex : sum_i (q_i - p_i)^2 / p_i <= alpha }.
// Deliberately makes no use of the closed-form solution.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "rdrl/errors.hpp"
#include "rdrl/tabular_robust.hpp"

namespace rdrl::tabular {

namespace {

struct Problem {
  std::vector<double> p;  // nominal probabilities on the support
  std::vector<double> c;  // returns on the support
  double alpha = 0.0;

  double divergence(std::span<const double> q) const {
    double d = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double diff = q[i] - p[i];
      d += diff * diff / p[i];
    }
    return d;
  }
  double value(std::span<const double> q) const {
    double v = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) v += q[i] * c[i];
    return v;
  }
};

// Pulls q back along the segment towards p until the divergence equals
// alpha. The divergence is quadratic in (q - p), so one scaling suffices.
void repair(const Problem& pb, std::vector<double>& q) {
  const double d = pb.divergence(q);
  if (d <= pb.alpha) return;
  const double t = std::sqrt(pb.alpha / d);
  for (std::size_t i = 0; i < q.size(); ++i) q[i] = std::max(0.0, pb.p[i] + t * (q[i] - pb.p[i]));
  const double s = std::accumulate(q.begin(), q.end(), 0.0);
  for (double& v : q) v /= s;
}

// ---- KKT water-filling by nested bisection -------------------------------
//
// Stationarity of the Lagrangian gives q_i = p_i max(0, 1 - t (c_i + nu))
// with t >= 0 the inverse divergence multiplier and nu the simplex
// multiplier. For fixed t, nu solves sum q = 1 (monotone in nu); t is then
// chosen so that the divergence equals alpha (monotone in t).

struct KktOutcome {
  std::vector<double> q;
  bool converged = false;
};

void kkt_point(const Problem& pb, double t, std::vector<double>& q) {
  const auto [lo_it, hi_it] = std::minmax_element(pb.c.begin(), pb.c.end());
  double lo = -*hi_it, hi = -*lo_it;  // sum(q) >= 1 at lo, <= 1 at hi
  auto fill = [&](double nu) {
    double s = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
      q[i] = pb.p[i] * std::max(0.0, 1.0 - t * (pb.c[i] + nu));
      s += q[i];
    }
    return s;
  };
  for (int it = 0; it < 200 && hi - lo > 0.0; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (fill(mid) >= 1.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const double s = fill(lo);
  for (double& v : q) v /= s;
}

KktOutcome kkt_bisection(const Problem& pb) {
  const std::size_t m = pb.p.size();
  KktOutcome out;
  out.q.assign(m, 0.0);

  // Largest useful radius: all mass on the minimal-return outcomes.
  const double c_min = *std::min_element(pb.c.begin(), pb.c.end());
  std::vector<double> vertex(m, 0.0);
  double mass = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (pb.c[i] == c_min) mass += pb.p[i];
  }
  for (std::size_t i = 0; i < m; ++i) vertex[i] = pb.c[i] == c_min ? pb.p[i] / mass : 0.0;
  if (pb.divergence(vertex) <= pb.alpha) {
    out.q = std::move(vertex);
    out.converged = true;
    return out;
  }

  double lo = -30.0, hi = 30.0;  // log t; costs are unit-scale
  std::vector<double> q(m);
  for (int it = 0; it < 300; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    kkt_point(pb, std::exp(mid), q);
    if (pb.divergence(q) <= pb.alpha) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  kkt_point(pb, std::exp(lo), out.q);
  const double d = pb.divergence(out.q);
  out.converged = d <= pb.alpha && pb.alpha - d <= 1e-10 * std::max(1.0, pb.alpha);
  return out;
}

// ---- multi-start augmented Lagrangian ------------------------------------

void project_to_simplex(std::vector<double>& v) {
  std::vector<double> u = v;
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumsum = 0.0, theta = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    cumsum += u[j];
    const double t = (cumsum - 1.0) / static_cast<double>(j + 1);
    if (u[j] - t > 0.0) theta = t;
  }
  for (double& x : v) x = std::max(0.0, x - theta);
}

struct AlOutcome {
  std::vector<double> q;
  bool converged = false;
};

AlOutcome augmented_lagrangian(const Problem& pb, std::vector<double> q,
                               const OracleConfig& cfg) {
  const std::size_t m = q.size();
  double lambda = 0.0, rho = 1.0;
  double prev_violation = std::numeric_limits<double>::infinity();

  std::vector<double> grad(m), trial(m), y(m), q_prev(m);

  auto g = [&](std::span<const double> x) { return pb.divergence(x) - pb.alpha; };
  auto objective = [&](std::span<const double> x) {
    const double shifted = std::max(0.0, lambda + rho * g(x));
    return pb.value(x) + (shifted * shifted - lambda * lambda) / (2.0 * rho);
  };
  auto gradient = [&](std::span<const double> x, std::vector<double>& out) {
    const double mult = std::max(0.0, lambda + rho * g(x));
    for (std::size_t i = 0; i < m; ++i) out[i] = pb.c[i] + mult * 2.0 * (x[i] - pb.p[i]) / pb.p[i];
  };

  bool converged = false;
  for (std::size_t outer = 0; outer < cfg.max_outer_iterations; ++outer) {
    // Accelerated projected gradient with backtracking and adaptive restart.
    double step = 1.0;
    double momentum = 1.0;
    y = q;
    double fq = objective(q);
    for (std::size_t it = 0; it < cfg.max_inner_iterations; ++it) {
      gradient(y, grad);
      const double fy = objective(y);
      for (int bt = 0; bt < 60; ++bt) {
        for (std::size_t i = 0; i < m; ++i) trial[i] = y[i] - step * grad[i];
        project_to_simplex(trial);
        double lin = 0.0, sq = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          const double d = trial[i] - y[i];
          lin += grad[i] * d;
          sq += d * d;
        }
        if (objective(trial) <= fy + lin + sq / (2.0 * step) + 1e-15 * std::abs(fy)) break;
        step *= 0.5;
      }
      q_prev = q;
      q = trial;
      const double fnew = objective(q);
      double move = 0.0;
      for (std::size_t i = 0; i < m; ++i) move = std::max(move, std::abs(q[i] - q_prev[i]));
      if (fnew > fq) {
        momentum = 1.0;  // restart
        y = q;
      } else {
        const double next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * momentum * momentum));
        const double beta = (momentum - 1.0) / next;
        for (std::size_t i = 0; i < m; ++i) y[i] = q[i] + beta * (q[i] - q_prev[i]);
        momentum = next;
      }
      fq = fnew;
      step *= 1.5;
      if (move < 1e-15) break;
    }

    const double violation = std::max(0.0, g(q));
    const double new_lambda = std::max(0.0, lambda + rho * g(q));
    const bool lambda_stable = std::abs(new_lambda - lambda) <= 1e-10 * std::max(1.0, lambda);
    lambda = new_lambda;
    if (violation <= cfg.feasibility_tol && lambda_stable) {
      converged = true;
      break;
    }
    if (violation > 0.25 * prev_violation) rho = std::min(rho * 10.0, 1e8);
    prev_violation = violation;
  }
  return {std::move(q), converged};
}

}  // namespace

OracleResult robust_value_oracle(const TrajectoryDistribution& td, double alpha,
                                 const OracleConfig& cfg) {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw InvalidArgument("oracle: alpha must be >= 0");

  Problem pb;
  pb.alpha = alpha;
  std::vector<std::size_t> support;
  for (std::size_t i = 0; i < td.size(); ++i) {
    const auto& o = td.outcomes()[i];
    if (o.prob > 0.0) {
      support.push_back(i);
      pb.p.push_back(o.prob);
      pb.c.push_back(o.ret);
    }
  }
  const double s = std::accumulate(pb.p.begin(), pb.p.end(), 0.0);
  for (double& v : pb.p) v /= s;

  // Work with centred, unit-scale costs; the minimiser is unchanged.
  const double mean = pb.value(pb.p);
  double scale = 0.0;
  for (double& v : pb.c) {
    v -= mean;
    scale = std::max(scale, std::abs(v));
  }

  OracleResult res;
  std::vector<double> q_support = pb.p;
  if (alpha == 0.0 || support.size() == 1 || scale == 0.0) {
    res.method = "trivial";
  } else {
    for (double& v : pb.c) v /= scale;
    KktOutcome kkt = kkt_bisection(pb);
    repair(pb, kkt.q);
    q_support = kkt.q;
    res.method = "kkt_bisection";
    res.certified = kkt.converged;

    // Independent cross-check from random interior starts.
    std::mt19937_64 rng(cfg.seed);
    std::exponential_distribution<double> expo(1.0);
    double best_value = pb.value(q_support);
    for (std::size_t r = 0; r < cfg.restarts; ++r) {
      std::vector<double> start(pb.p.size());
      double total = 0.0;
      for (double& v : start) total += (v = expo(rng));
      for (double& v : start) v /= total;
      AlOutcome out = augmented_lagrangian(pb, std::move(start), cfg);
      repair(pb, out.q);
      const double v = pb.value(out.q);
      if (v < best_value - 1e-12) {
        best_value = v;
        q_support = std::move(out.q);
        res.method = "augmented_lagrangian";
        res.certified = out.converged;
      }
    }
  }

  res.q.assign(td.size(), 0.0);
  double value = 0.0;
  for (std::size_t k = 0; k < support.size(); ++k) {
    res.q[support[k]] = q_support[k];
    value += q_support[k] * td.outcomes()[support[k]].ret;
  }
  res.value = value;
  res.divergence = chi_square_divergence(res.q, td.probs());
  return res;
}

}  // namespace rdrl::tabular

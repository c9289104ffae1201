#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "rdrl/errors.hpp"
#include "rdrl/tabular_robust.hpp"
#include "test_support.hpp"

using namespace rdrl;
using namespace rdrl::tabular;
using rdrl::testing::random_simplex;

namespace {

TrajectoryDistribution td_of(std::vector<double> p, std::vector<double> r) {
  return TrajectoryDistribution(p, r);
}

TabularMDP single_state(double reward, double gamma) {
  TabularMDP m;
  m.n_states = 1;
  m.n_actions = 2;
  m.transition = {1.0, 1.0};
  m.reward = {reward, reward};
  m.gamma = gamma;
  return m;
}

TabularMDP random_mdp(std::mt19937_64& rng, std::size_t S, std::size_t A, double gamma) {
  TabularMDP m;
  m.n_states = S;
  m.n_actions = A;
  m.gamma = gamma;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (std::size_t sa = 0; sa < S * A; ++sa) {
    auto row = random_simplex(rng, S);
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < S; ++i) s += row[i];
    row[S - 1] = 1.0 - s;  // exact row sum for the 1e-12 check
    m.transition.insert(m.transition.end(), row.begin(), row.end());
    m.reward.push_back(u(rng));
  }
  return m;
}

TabularPolicy random_policy(std::mt19937_64& rng, std::size_t S, std::size_t A) {
  TabularPolicy pi{S, A, {}};
  for (std::size_t s = 0; s < S; ++s) {
    auto row = random_simplex(rng, A);
    double t = 0.0;
    for (std::size_t i = 0; i + 1 < A; ++i) t += row[i];
    row[A - 1] = 1.0 - t;
    pi.probs.insert(pi.probs.end(), row.begin(), row.end());
  }
  return pi;
}

// Two outcomes: the ball is an interval for q1, so the minimum is explicit.
double two_point_min(double p1, double r1, double r2, double alpha) {
  const double half = std::sqrt(alpha * p1 * (1.0 - p1));
  const double lo = std::max(0.0, p1 - half), hi = std::min(1.0, p1 + half);
  return std::min(lo * r1 + (1.0 - lo) * r2, hi * r1 + (1.0 - hi) * r2);
}

double bellman_residual(const TabularMDP& m, const TabularPolicy& pi, const QTable& q) {
  double worst = 0.0;
  for (std::size_t s = 0; s < m.n_states; ++s) {
    for (std::size_t a = 0; a < m.n_actions; ++a) {
      double t = m.r(s, a);
      for (std::size_t n = 0; n < m.n_states; ++n) {
        double v = 0.0;
        for (std::size_t b = 0; b < m.n_actions; ++b) v += pi.prob(n, b) * q(n, b);
        t += m.gamma * m.p(s, a, n) * v;
      }
      worst = std::max(worst, std::abs(t - q(s, a)));
    }
  }
  return worst;
}

}  // namespace

TEST_SUITE("tabular dynamic programming") {
  TEST_CASE("single state geometric series") {
    const auto q = policy_evaluation(single_state(1.0, 0.5), TabularPolicy::uniform(1, 2), 1e-12);
    CHECK(q(0, 0) == doctest::Approx(2.0).epsilon(1e-10));
    CHECK(q(0, 1) == doctest::Approx(2.0).epsilon(1e-10));
  }

  TEST_CASE("zero rewards give zero values") {
    std::mt19937_64 rng(3);
    auto m = random_mdp(rng, 3, 2, 0.9);
    std::fill(m.reward.begin(), m.reward.end(), 0.0);
    const auto q = policy_evaluation(m, random_policy(rng, 3, 2), 1e-12);
    for (double v : q.values) CHECK(v == 0.0);
  }

  TEST_CASE("policy evaluation agrees with Monte-Carlo rollouts") {
    std::mt19937_64 rng(11);
    const auto m = random_mdp(rng, 3, 2, 0.9);
    const auto pi = random_policy(rng, 3, 2);
    const auto q = policy_evaluation(m, pi, 1e-12);
    CHECK(bellman_residual(m, pi, q) <= 1e-11);

    // 10^6 rollouts spread over the six (s, a) pairs, truncated where
    // gamma^t drops below 1e-7.
    std::mt19937_64 mc(12345);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto draw = [&](const double* row, std::size_t n) {
      double x = u(mc), c = 0.0;
      for (std::size_t i = 0; i + 1 < n; ++i) {
        c += row[i];
        if (x < c) return i;
      }
      return n - 1;
    };
    const std::size_t per_pair = 1'000'000 / 6;
    const std::size_t horizon = 160;
    for (std::size_t s0 = 0; s0 < 3; ++s0) {
      for (std::size_t a0 = 0; a0 < 2; ++a0) {
        double total = 0.0;
        for (std::size_t k = 0; k < per_pair; ++k) {
          std::size_t s = s0, a = a0;
          double g = 0.0, disc = 1.0;
          for (std::size_t t = 0; t < horizon; ++t) {
            g += disc * m.r(s, a);
            disc *= m.gamma;
            s = draw(&m.transition[(s * 2 + a) * 3], 3);
            a = draw(&pi.probs[s * 2], 2);
          }
          total += g;
        }
        CHECK(std::abs(total / per_pair - q(s0, a0)) <= 1e-2);
      }
    }
  }

  TEST_CASE("value iteration with one action is policy evaluation") {
    std::mt19937_64 rng(5);
    const auto m = random_mdp(rng, 4, 1, 0.8);
    const auto vi = value_iteration(m, 1e-12);
    const auto pe = policy_evaluation(m, TabularPolicy::uniform(4, 1), 1e-12);
    for (std::size_t i = 0; i < 4; ++i) CHECK(vi.values[i] == doctest::Approx(pe.values[i]).epsilon(1e-10));
  }

  TEST_CASE("two-state chain by hand recursion") {
    // action 0 stays, action 1 switches; reward depends on the state only.
    TabularMDP m;
    m.n_states = 2;
    m.n_actions = 2;
    m.transition = {1, 0, 0, 1, 0, 1, 1, 0};
    m.reward = {0, 0, 1, 1};
    m.gamma = 0.9;
    const auto q = value_iteration(m, 1e-13);
    // V(1) = 1/(1 - 0.9) = 10, V(0) = 0.9 * 10 = 9.
    CHECK(q(1, 0) == doctest::Approx(10.0).epsilon(1e-10));
    CHECK(q(1, 1) == doctest::Approx(1.0 + 0.9 * 9.0).epsilon(1e-10));
    CHECK(q(0, 1) == doctest::Approx(9.0).epsilon(1e-10));
    CHECK(q(0, 0) == doctest::Approx(0.9 * 9.0).epsilon(1e-10));
  }

  TEST_CASE("optimal values dominate every policy") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 20; ++trial) {
      const auto m = random_mdp(rng, 3, 3, 0.85);
      const auto vi = value_iteration(m, 1e-12);
      const auto pe = policy_evaluation(m, random_policy(rng, 3, 3), 1e-12);
      for (std::size_t i = 0; i < vi.values.size(); ++i) CHECK(vi.values[i] >= pe.values[i] - 1e-9);
    }
  }

  TEST_CASE("non-convergence is reported") {
    const auto m = single_state(1.0, 0.99);
    CHECK_THROWS_AS(policy_evaluation(m, TabularPolicy::uniform(1, 2), 1e-12, 5), ConvergenceError);
  }

  TEST_CASE("malformed tables are rejected") {
    auto m = single_state(1.0, 0.5);
    m.transition = {0.5, 1.0};
    CHECK_THROWS_AS(m.validate(), InvalidArgument);
    m = single_state(1.0, 1.0);
    CHECK_THROWS_AS(m.validate(), InvalidArgument);
  }
}

TEST_SUITE("trajectory enumeration") {
  TEST_CASE("deterministic MDP has one outcome") {
    TabularMDP m;
    m.n_states = 2;
    m.n_actions = 1;
    m.transition = {0, 1, 1, 0};
    m.reward = {1, 2};
    m.gamma = 0.5;
    m.horizon = 3;
    const auto td = enumerate_return_distribution(m, TabularPolicy::uniform(2, 1), 0, 0);
    REQUIRE(td.size() == 1);
    CHECK(td.outcomes()[0].prob == 1.0);
    CHECK(td.outcomes()[0].ret == doctest::Approx(1 + 0.5 * 2 + 0.25 * 1));
  }

  TEST_CASE("two equally likely terminal rewards") {
    // The first reward is 0; the second step lands on a 0 or 1 reward state.
    // Horizon 2 is the shortest where the stochastic transition matters.
    TabularMDP m;
    m.n_states = 3;
    m.n_actions = 1;
    m.transition = {0, 0.5, 0.5, 0, 1, 0, 0, 0, 1};
    m.reward = {0, 0, 1};
    m.gamma = 0.9;
    m.horizon = 2;
    const auto td = enumerate_return_distribution(m, TabularPolicy::uniform(3, 1), 0, 0);
    REQUIRE(td.size() == 2);
    CHECK(td.outcomes()[0].prob == 0.5);
    CHECK(td.outcomes()[0].ret == 0.0);
    CHECK(td.outcomes()[1].prob == 0.5);
    CHECK(td.outcomes()[1].ret == doctest::Approx(0.9));
  }

  TEST_CASE("mean matches truncated dynamic programming") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 10; ++trial) {
      auto m = random_mdp(rng, 2, 2, 0.7);
      m.horizon = 3;
      const auto pi = random_policy(rng, 2, 2);
      const auto q = policy_evaluation(m, pi, 1e-13);
      double rmax = 0.0;
      for (double r : m.reward) rmax = std::max(rmax, std::abs(r));
      const double bound = std::pow(m.gamma, 3) * rmax / (1.0 - m.gamma);
      for (std::size_t s = 0; s < 2; ++s) {
        for (std::size_t a = 0; a < 2; ++a) {
          const auto td = enumerate_return_distribution(m, pi, s, a);
          double total = 0.0;
          for (const auto& o : td.outcomes()) total += o.prob;
          CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
          CHECK(std::abs(td.mean() - q(s, a)) <= bound + 1e-12);
        }
      }
    }
  }

  TEST_CASE("cap exceeded") {
    std::mt19937_64 rng(1);
    auto m = random_mdp(rng, 3, 2, 0.9);
    m.horizon = 8;
    CHECK_THROWS_AS(enumerate_return_distribution(m, TabularPolicy::uniform(3, 2), 0, 0, 1000), SizeError);
  }
}

TEST_SUITE("chi-square ball") {
  TEST_CASE("centered returns") {
    auto c = centered_returns(td_of({0.5, 0.5}, {0, 1}));
    CHECK(c[0] == -0.5);
    CHECK(c[1] == 0.5);
    for (double v : centered_returns(td_of({0.3, 0.7}, {4, 4}))) CHECK(v == 0.0);
    c = centered_returns(td_of({0.2, 0.3, 0.5}, {1, 2, 4}));
    CHECK(c[0] == doctest::Approx(-1.8));
    CHECK(c[1] == doctest::Approx(-0.8));
    CHECK(c[2] == doctest::Approx(1.2));
  }

  TEST_CASE("centered returns have zero weighted sum") {
    std::mt19937_64 rng(2);
    for (int t = 0; t < 200; ++t) {
      const std::size_t n = 2 + t % 5;
      const auto p = random_simplex(rng, n);
      const auto r = rdrl::testing::uniform_vec(rng, n, -5, 5);
      const auto td = TrajectoryDistribution(p, r);
      const auto c = centered_returns(td);
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += p[i] * c[i];
      CHECK(std::abs(s) <= 1e-12);
    }
  }

  TEST_CASE("variance") {
    CHECK(return_variance(td_of({0.3, 0.7}, {2, 2})) == 0.0);
    CHECK(return_variance(td_of({0.5, 0.5}, {0, 1})) == doctest::Approx(0.25));
    std::mt19937_64 rng(4);
    for (int t = 0; t < 200; ++t) {
      const std::size_t n = 2 + t % 5;
      const auto p = random_simplex(rng, n);
      const auto r = rdrl::testing::uniform_vec(rng, n, -5, 5);
      double m1 = 0.0, m2 = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        m1 += p[i] * r[i];
        m2 += p[i] * r[i] * r[i];
      }
      const double v = return_variance(TrajectoryDistribution(p, r));
      CHECK(v >= 0.0);
      CHECK(std::abs(v - (m2 - m1 * m1)) <= 1e-10);
    }
  }

  TEST_CASE("divergence") {
    const std::vector<double> p0{0.5, 0.5};
    CHECK(chi_square_divergence(p0, p0) == 0.0);
    const std::vector<double> q{0.75, 0.25};
    CHECK(chi_square_divergence(q, p0) == doctest::Approx(0.25));
    const std::vector<double> p1{1.0, 0.0}, q1{0.5, 0.5};
    CHECK_THROWS_AS(chi_square_divergence(q1, p1), DomainError);
  }

  TEST_CASE("alpha_max") {
    CHECK(alpha_max(td_of({0.5, 0.5}, {0, 1})) == doctest::Approx(1.0));
    CHECK(alpha_max(td_of({0.5, 0.5}, {3, 3})) == kInfinity);
    CHECK(alpha_max(td_of({0.9, 0.1}, {0, 1})) == doctest::Approx(1.0 / 9.0));
    std::mt19937_64 rng(6);
    for (int t = 0; t < 100; ++t) {
      const auto td = TrajectoryDistribution(random_simplex(rng, 4), rdrl::testing::uniform_vec(rng, 4, -5, 5));
      CHECK(alpha_max(td) <= 1.0 + 1e-12);
    }
  }

  TEST_CASE("worst case distribution examples") {
    const auto td = td_of({0.5, 0.5}, {0, 1});
    auto w = worst_case_distribution(td, 0.25);
    CHECK(w.outcomes()[0].prob == doctest::Approx(0.75));
    CHECK(w.outcomes()[1].prob == doctest::Approx(0.25));
    CHECK(w.mean() == doctest::Approx(0.25));
    CHECK(chi_square_divergence(w.probs(), td.probs()) == doctest::Approx(0.25));

    w = worst_case_distribution(td, 1e-12);
    CHECK(w.outcomes()[0].prob == doctest::Approx(0.5).epsilon(1e-5));

    w = worst_case_distribution(td, 1.0);
    CHECK(w.outcomes()[0].prob == doctest::Approx(1.0));
    CHECK(w.outcomes()[1].prob == doctest::Approx(0.0));
    CHECK(w.mean() == doctest::Approx(0.0));

    CHECK_THROWS_AS(worst_case_distribution(td, 1.5), FeasibilityError);
  }

  TEST_CASE("worst case lies on the boundary and is oracle-feasible") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 100; ++t) {
      const std::size_t n = 2 + t % 5;
      const auto td = TrajectoryDistribution(random_simplex(rng, n), rdrl::testing::uniform_vec(rng, n, -5, 5));
      const double a = std::max(1e-6, u(rng)) * alpha_max(td);
      const auto w = worst_case_distribution(td, a);
      CHECK(std::abs(chi_square_divergence(w.probs(), td.probs()) - a) <= 1e-8);
      CHECK(std::abs(w.mean() - closed_form_value(td, a)) <= 1e-8);
      CHECK(robust_value_oracle(td, a).value <= w.mean() + 1e-8);
    }
  }

  TEST_CASE("closed form and surrogate") {
    const auto td = td_of({0.5, 0.5}, {0, 1});
    CHECK(closed_form_value(td, 0.25) == doctest::Approx(0.25));
    CHECK(surrogate_form_value(td, 0.25) == doctest::Approx(0.5 - 0.25 * 0.5));
    // the two coincide when the radius is the square of the penalty
    CHECK(closed_form_value(td, 0.09) == doctest::Approx(surrogate_form_value(td, 0.3)));
  }
}

TEST_SUITE("robust value oracle") {
  TEST_CASE("zero radius") {
    const auto td = td_of({0.2, 0.3, 0.5}, {1, 2, 4});
    const auto res = robust_value_oracle(td, 0.0);
    CHECK(res.value == doctest::Approx(2.8).epsilon(1e-12));
    CHECK(res.certified);
  }

  TEST_CASE("symmetric two-point example") {
    const auto res = robust_value_oracle(td_of({0.5, 0.5}, {0, 1}), 0.25);
    CHECK(std::abs(res.value - 0.25) <= 1e-4);
    CHECK(res.divergence <= 0.25 + 1e-10);
  }

  TEST_CASE("ball containing the pessimal vertex") {
    const auto td = td_of({0.2, 0.3, 0.5}, {1, -2, 4});
    // point mass on outcome 1 has divergence 1/0.3 - 1
    const auto res = robust_value_oracle(td, 1.0 / 0.3 - 1.0 + 0.1);
    CHECK(res.value == doctest::Approx(-2.0).epsilon(1e-12));
  }

  TEST_CASE("two-outcome interval oracle") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 300; ++t) {
      const double p1 = 0.02 + 0.96 * u(rng);
      const double r1 = -5 + 10 * u(rng), r2 = -5 + 10 * u(rng);
      const auto td = td_of({p1, 1.0 - p1}, {r1, r2});
      const double a = 3.0 * u(rng);
      const double expect = two_point_min(p1, r1, r2, a);
      CHECK(std::abs(robust_value_oracle(td, a).value - expect) <= 1e-9);
    }
  }

  TEST_CASE("oracle never beats a feasible grid point") {
    // Coarse simplex grid over three outcomes: every feasible grid point
    // bounds the minimum from above; the best one is within grid resolution.
    std::mt19937_64 rng(10);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 10; ++t) {
      const auto p = random_simplex(rng, 3);
      const auto r = rdrl::testing::uniform_vec(rng, 3, -5, 5);
      const auto td = TrajectoryDistribution(p, r);
      const double a = 2.0 * u(rng) * alpha_max(td);
      const double oracle = robust_value_oracle(td, a).value;
      const int N = 600;
      double best = 1e300;
      for (int i = 0; i <= N; ++i) {
        for (int j = 0; i + j <= N; ++j) {
          const std::vector<double> q{double(i) / N, double(j) / N, double(N - i - j) / N};
          if (chi_square_divergence(q, p) > a) continue;
          best = std::min(best, q[0] * r[0] + q[1] * r[1] + q[2] * r[2]);
        }
      }
      CHECK(oracle <= best + 1e-12);
      CHECK(best - oracle <= 0.05);
    }
  }

  TEST_CASE("monotone in the radius") {
    std::mt19937_64 rng(12);
    for (int t = 0; t < 30; ++t) {
      const std::size_t n = 2 + t % 5;
      const auto td = TrajectoryDistribution(random_simplex(rng, n), rdrl::testing::uniform_vec(rng, n, -5, 5));
      double prev = 1e300;
      for (double a = 0.0; a <= 2.0; a += 0.1) {
        const double v = robust_value_oracle(td, a).value;
        CHECK(v <= prev + 1e-9);
        prev = v;
      }
    }
  }

  TEST_CASE("deterministic for a fixed seed") {
    const auto td = td_of({0.1, 0.2, 0.3, 0.4}, {3, -1, 2, 0.5});
    const auto a = robust_value_oracle(td, 0.05);
    const auto b = robust_value_oracle(td, 0.05);
    CHECK(a.value == b.value);
    CHECK(a.q == b.q);
  }
}

TEST_SUITE("verify_eq1") {
  TEST_CASE("examples") {
    const auto td = td_of({0.5, 0.5}, {0, 1});
    auto res = verify_eq1(td, 0.25, 1e-4);
    CHECK(res.feasible);
    CHECK(res.certified);
    CHECK(res.exact_min == doctest::Approx(0.25).epsilon(1e-6));
    CHECK(res.closed_form == doctest::Approx(0.25));

    res = verify_eq1(td, 0.0, 1e-4);
    CHECK(res.certified);
    CHECK(res.exact_min == doctest::Approx(0.5));
    CHECK(res.closed_form == 0.5);

    res = verify_eq1(td, 4.0, 1e-4);
    CHECK_FALSE(res.feasible);
    CHECK(res.certified);
    CHECK(res.exact_min == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(res.closed_form == doctest::Approx(-0.5));
  }

  TEST_CASE("constant returns short-circuit") {
    const auto res = verify_eq1(td_of({0.4, 0.6}, {2, 2}), 0.7, 1e-4);
    CHECK(res.certified);
    CHECK(res.exact_min == 2.0);
    CHECK(res.closed_form == 2.0);
  }

  TEST_CASE("corrupted closed form is reported") {
    VerifyOptions opts;
    opts.closed_form_bias = 1e-3;
    const auto res = verify_eq1(td_of({0.5, 0.5}, {0, 1}), 0.25, 1e-4, opts);
    CHECK_FALSE(res.certified);
    CHECK_FALSE(res.report.empty());
  }

  TEST_CASE("translation and scaling") {
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 40; ++t) {
      const std::size_t n = 2 + t % 5;
      const auto p = random_simplex(rng, n);
      auto r = rdrl::testing::uniform_vec(rng, n, -5, 5);
      const auto td = TrajectoryDistribution(p, r);
      const double a = u(rng) * alpha_max(td);
      const auto base = verify_eq1(td, a, 1e-4);

      const double c = -3.0 + 6.0 * u(rng);
      std::vector<double> shifted = r;
      for (auto& x : shifted) x += c;
      const auto sh = verify_eq1(TrajectoryDistribution(p, shifted), a, 1e-4);
      CHECK(std::abs(sh.exact_min - (base.exact_min + c)) <= 1e-8);
      CHECK(std::abs(sh.closed_form - (base.closed_form + c)) <= 1e-10);

      const double k = 0.2 + 3.0 * u(rng);
      std::vector<double> scaled = r;
      for (auto& x : scaled) x *= k;
      const auto tds = TrajectoryDistribution(p, scaled);
      const auto sc = verify_eq1(tds, a, 1e-4);
      CHECK(std::abs((sc.exact_min - tds.mean()) - k * (base.exact_min - td.mean())) <= 1e-8);
      CHECK(std::sqrt(a * return_variance(tds)) == doctest::Approx(k * std::sqrt(a * return_variance(td))));
    }
  }
}

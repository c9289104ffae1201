#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "rdrl/autodiff.hpp"
#include "rdrl/envs.hpp"
#include "rdrl/mlp.hpp"
#include "rdrl/quantile.hpp"
#include "rdrl/tabular_robust.hpp"

using namespace rdrl;

static void BM_CartPoleStep(benchmark::State& state) {
  const envs::CartPoleParams p;
  auto s = envs::reset(p, 1);
  int a = 0;
  for (auto _ : state) {
    auto r = envs::step_cartpole(s, p, a);
    s = r.done ? envs::reset(p, 1) : r.next;
    a ^= 1;
    benchmark::DoNotOptimize(s);
  }
}
BENCHMARK(BM_CartPoleStep);

static void BM_PendulumStep(benchmark::State& state) {
  const envs::PendulumParams p;
  auto s = envs::reset(p, 1);
  for (auto _ : state) {
    auto r = envs::step_pendulum(s, p, 0.5);
    s = r.done ? envs::reset(p, 1) : r.next;
    benchmark::DoNotOptimize(s);
  }
}
BENCHMARK(BM_PendulumStep);

static void BM_XiAlpha(benchmark::State& state) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  std::vector<double> atoms(static_cast<std::size_t>(state.range(0)));
  for (auto& v : atoms) v = n(rng);
  for (auto _ : state) benchmark::DoNotOptimize(quantile::xi_alpha(atoms, {1.0}));
}
BENCHMARK(BM_XiAlpha)->Arg(10)->Arg(25)->Arg(50);

static tabular::TrajectoryDistribution random_dist(std::size_t k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.05, 1.0), r(-5.0, 5.0);
  std::vector<double> p(k), ret(k);
  double z = 0.0;
  for (auto& v : p) z += (v = u(rng));
  for (auto& v : p) v /= z;
  for (auto& v : ret) v = r(rng);
  return tabular::TrajectoryDistribution(p, ret);
}

static void BM_ClosedForm(benchmark::State& state) {
  const auto td = random_dist(static_cast<std::size_t>(state.range(0)), 7);
  const double a = 0.5 * tabular::alpha_max(td);
  for (auto _ : state) benchmark::DoNotOptimize(tabular::closed_form_value(td, a));
}
BENCHMARK(BM_ClosedForm)->Arg(6);

static void BM_Oracle(benchmark::State& state) {
  const auto td = random_dist(static_cast<std::size_t>(state.range(0)), 7);
  const double a = 0.5 * tabular::alpha_max(td);
  tabular::OracleConfig cfg;
  cfg.restarts = static_cast<std::size_t>(state.range(1));
  for (auto _ : state) benchmark::DoNotOptimize(tabular::robust_value_oracle(td, a, cfg).value);
}
BENCHMARK(BM_Oracle)->Args({6, 0})->Args({6, 4})->Unit(benchmark::kMillisecond);

// Forward and reverse pass of a 256:256 MLP on a batch, the inner loop of
// every critic update.
static void BM_MlpBackward(benchmark::State& state) {
  const auto batch = static_cast<Eigen::Index>(state.range(0));
  ad::MlpSpec spec{4, 20, {256, 256}};
  std::mt19937_64 rng(1);
  const auto params = ad::init_mlp(spec, rng);
  const ad::Matrix x = ad::Matrix::Random(batch, 4);
  for (auto _ : state) {
    ad::Graph g;
    const auto vars = g.bind(params);
    const auto loss = ad::mean(ad::square(ad::mlp_forward(spec, vars, g.constant(x))));
    benchmark::DoNotOptimize(g.gradients(loss, params));
  }
}
BENCHMARK(BM_MlpBackward)->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);
BENCHMARK_MAIN();

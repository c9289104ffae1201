#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

#include "doctest.h"
#include "rdrl/errors.hpp"
#include "rdrl/qrdqn.hpp"
#include "rdrl/replay.hpp"
#include "scenarios.hpp"

using namespace rdrl;
using namespace rdrl::qrdqn;
using ad::Matrix;

namespace {

QrdqnConfig small_cfg() {
  QrdqnConfig cfg;
  cfg.hidden = {16, 16};
  cfg.n_quantiles = 4;
  cfg.batch = 8;
  cfg.learning_starts = 50;
  cfg.buffer_capacity = 1000;
  return cfg;
}

// Network whose output is exactly `atoms` whatever the state: zero weights,
// bias carrying the atoms.
QNetwork constant_net(const std::vector<double>& atoms, std::size_t n_actions) {
  QrdqnConfig cfg;
  cfg.hidden = {2};
  cfg.n_quantiles = atoms.size() / n_actions;
  Rng rng(0);
  QNetwork net = QNetwork::create(4, n_actions, cfg, rng);
  for (auto& t : net.params.tensors()) t.setZero();
  for (std::size_t i = 0; i < atoms.size(); ++i) net.params[3](0, static_cast<Eigen::Index>(i)) = atoms[i];
  return net;
}

Batch one_row_batch(double reward, bool done) {
  Batch b;
  b.states = Matrix::Zero(1, 4);
  b.actions = Matrix::Zero(1, 1);
  b.rewards = Matrix::Constant(1, 1, reward);
  b.next_states = Matrix::Zero(1, 4);
  b.dones = Matrix::Constant(1, 1, done ? 1.0 : 0.0);
  return b;
}

}  // namespace

TEST_SUITE("replay") {
  TEST_CASE("ring buffer") {
    ReplayBuffer buf(3, 2, 1);
    for (int i = 0; i < 5; ++i) buf.push({{double(i), 0}, {1}, double(i), {0, 0}, false});
    CHECK(buf.size() == 3);
    CHECK(buf.capacity() == 3);
    CHECK(buf.inserted() == 5);
    std::set<double> rewards;
    for (std::size_t i = 0; i < 3; ++i) rewards.insert(buf.at(i).reward);
    CHECK(rewards == std::set<double>{2, 3, 4});
  }

  TEST_CASE("uniform sampling") {
    ReplayBuffer buf(4, 1, 1);
    for (int i = 0; i < 4; ++i) buf.push({{0}, {0}, double(i), {0}, false});
    Rng rng(1);
    std::map<double, int> counts;
    const int n = 40000;
    const auto b = buf.sample(n, rng);
    for (int i = 0; i < n; ++i) ++counts[b.rewards(i, 0)];
    const double sd = std::sqrt(n * 0.25 * 0.75);
    for (auto [k, c] : counts) CHECK(std::abs(c - n / 4.0) <= 3 * sd);
  }

  TEST_CASE("rejects malformed transitions") {
    ReplayBuffer buf(2, 2, 1);
    CHECK_THROWS_AS(buf.push({{0}, {0}, 0, {0, 0}, false}), InvalidArgument);
    CHECK_THROWS_AS(buf.push({{0, 0}, {0}, NAN, {0, 0}, false}), NumericFault);
  }
}

TEST_SUITE("action selection") {
  TEST_CASE("alpha zero is the mean greedy") {
    const std::vector<double> row{1, 2, 3, 0, 5, 7};  // means 2, 4
    CHECK(greedy_action(row, 2, {0.0}) == 1);
  }

  TEST_CASE("equal means prefer the certain action") {
    const std::vector<double> row{0, 2, 1, 1};
    CHECK(greedy_action(row, 2, {0.0}) == 0);  // tie -> lowest index
    for (double a : {1e-6, 0.5, 3.0}) CHECK(greedy_action(row, 2, {a}) == 1);
    const auto net = constant_net(row, 2);
    Rng rng(2);
    const std::vector<double> s(4, 0.0);
    CHECK(select_action(net, s, 1.0, 0.0, rng) == 1);
    CHECK(select_action(net, s, 0.0, 0.0, rng) == 0);
  }

  TEST_CASE("pure exploration is uniform") {
    const auto net = constant_net({0, 0, 0, 5, 5, 5, 1, 1, 1}, 3);
    Rng rng(3);
    const std::vector<double> s(4, 0.0);
    std::vector<int> counts(3, 0);
    const int n = 10000;
    for (int i = 0; i < n; ++i) ++counts[select_action(net, s, 0.0, 1.0, rng)];
    const double sd = std::sqrt(n * (1.0 / 3) * (2.0 / 3));
    for (int c : counts) CHECK(std::abs(c - n / 3.0) <= 3 * sd);
  }

  TEST_CASE("scaling atoms keeps the argmax") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-5, 5), sc(0.01, 100);
    for (int t = 0; t < 2000; ++t) {
      std::vector<double> row(3 * 5);
      for (auto& x : row) x = u(rng);
      const double c = sc(rng);
      auto scaled = row;
      for (auto& x : scaled) x *= c;
      const double a = 3.0 * (t % 4);
      CHECK(greedy_action(row, 3, {a}) == greedy_action(scaled, 3, {a}));
    }
  }

  TEST_CASE("epsilon schedule") {
    QrdqnConfig cfg;
    CHECK(cfg.epsilon_at(0, 1000) == 1.0);
    CHECK(cfg.epsilon_at(100, 1000) == doctest::Approx(1.0 - 0.5 * 0.95));
    CHECK(cfg.epsilon_at(200, 1000) == doctest::Approx(0.05));
    CHECK(cfg.epsilon_at(900, 1000) == doctest::Approx(0.05));
  }
}

TEST_SUITE("targets") {
  TEST_CASE("terminal transitions bootstrap nothing") {
    const auto net = constant_net({3, 4, 5, 6}, 1);
    const auto y = compute_targets(one_row_batch(1.5, true), net, QrdqnConfig{});
    for (Eigen::Index j = 0; j < y.cols(); ++j) CHECK(y(0, j) == 1.5);
  }

  TEST_CASE("gamma zero") {
    QrdqnConfig cfg;
    cfg.gamma = 1e-300;  // validate() wants gamma > 0; this is zero for all purposes
    const auto net = constant_net({3, 4, 5, 6}, 1);
    const auto y = compute_targets(one_row_batch(-2.0, false), net, cfg);
    for (Eigen::Index j = 0; j < y.cols(); ++j) CHECK(y(0, j) == doctest::Approx(-2.0));
  }

  TEST_CASE("bootstrap from the penalised greedy action") {
    const auto net = constant_net({0, 2, 1, 1}, 2);
    QrdqnConfig cfg;
    cfg.n_quantiles = 2;
    cfg.alpha = 1.0;
    cfg.penalize_train = true;
    auto y = compute_targets(one_row_batch(0.0, false), net, cfg);
    CHECK(y(0, 0) == doctest::Approx(0.99));
    CHECK(y(0, 1) == doctest::Approx(0.99));
    cfg.penalize_train = false;
    y = compute_targets(one_row_batch(0.0, false), net, cfg);
    CHECK(y(0, 0) == 0.0);
    CHECK(y(0, 1) == doctest::Approx(1.98));
  }

  TEST_CASE("no gradient reaches the target network") {
    auto cfg = small_cfg();
    Rng rng(5);
    QNetwork online = QNetwork::create(4, 2, cfg, rng);
    QNetwork target = online;
    ReplayBuffer buf(64, 4, 1);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int i = 0; i < 64; ++i) buf.push({{u(rng), u(rng), u(rng), u(rng)}, {double(i % 2)}, 1.0,
                                           {u(rng), u(rng), u(rng), u(rng)}, i % 7 == 0});
    auto adam = make_optimizer(online, cfg);
    const auto before = target.params.hash();
    for (int i = 0; i < 20; ++i) {
      const auto loss = train_step(online, target, buf, cfg, adam, rng);
      REQUIRE(loss.has_value());
      CHECK(std::isfinite(*loss));
      CHECK(*loss >= 0.0);
    }
    CHECK(target.params.hash() == before);
    CHECK(online.params.hash() != before);
  }
}

TEST_SUITE("train_step") {
  TEST_CASE("insufficient buffer signals a skip") {
    auto cfg = small_cfg();
    Rng rng(6);
    QNetwork net = QNetwork::create(4, 2, cfg, rng);
    ReplayBuffer buf(10, 4, 1);
    buf.push({{0, 0, 0, 0}, {0}, 1, {0, 0, 0, 0}, false});
    auto adam = make_optimizer(net, cfg);
    CHECK_FALSE(train_step(net, net, buf, cfg, adam, rng).has_value());
  }

  TEST_CASE("zero gradient at the fixed point") {
    // One state, one action, reward r: atoms all at r / (1 - gamma) on both
    // networks give zero loss and zero gradient.
    QrdqnConfig cfg;
    cfg.batch = 4;
    cfg.n_quantiles = 4;
    const double fixed = 0.5 / (1.0 - cfg.gamma);
    QNetwork net = constant_net({fixed, fixed, fixed, fixed}, 1);
    ReplayBuffer buf(4, 4, 1);
    for (int i = 0; i < 4; ++i) buf.push({{0, 0, 0, 0}, {0}, 0.5, {0, 0, 0, 0}, false});
    Rng rng(1);
    const Batch b = buf.sample(4, rng);
    const Matrix y = compute_targets(b, net, cfg);
    ad::Graph g;
    const auto p = g.bind(net.params);
    const auto out = ad::mlp_forward(net.spec, p, g.constant(b.states));
    const auto loss = ad::quantile_huber(out, y, 1.0);
    const auto grads = g.gradients(loss, net.params);
    double norm = 0.0;
    for (const auto& m : grads) norm += m.squaredNorm();
    CHECK(std::sqrt(norm) <= 1e-12);
    CHECK(loss.scalar() <= 1e-24);
  }

  TEST_CASE("backup converges to r / (1 - gamma)") {
    const auto run = scenarios::backup_fixed_point(1.0, 0.99, 7, 1500, 40);
    INFO("max error ", run.max_abs_error);
    CHECK(run.max_abs_error <= 1e-2);
  }

  TEST_CASE("sync copies, polyak blends") {
    auto cfg = small_cfg();
    Rng rng(8);
    QNetwork a = QNetwork::create(4, 2, cfg, rng), b = QNetwork::create(4, 2, cfg, rng);
    auto c = b;
    sync_target(a, b, cfg);
    CHECK(a.params.hash() == b.params.hash());
    cfg.target_polyak = 0.5;
    sync_target(a, c, cfg);
    CHECK(c.params.hash() != a.params.hash());
  }
}

TEST_SUITE("run_training") {
  TEST_CASE("zero steps returns the initial network") {
    auto cfg = small_cfg();
    const auto res = run_training({}, cfg, 3, 0);
    CHECK(res.log.empty());
    Rng rng(derive_seed(3, streams::kInit));
    CHECK(res.network.params.hash() == QNetwork::create(4, 2, cfg, rng).params.hash());
  }

  TEST_CASE("log shape, determinism and target snapshots") {
    auto cfg = small_cfg();
    Rng init(derive_seed(11, streams::kInit));
    std::vector<std::uint64_t> online_hashes{QNetwork::create(4, 2, cfg, init).params.hash()};
    std::size_t stale = 0, syncs_seen = 0;
    TrainingHooks hooks;
    hooks.on_step = [&](std::size_t step, const QNetwork& online, const QNetwork& target) {
      const auto th = target.params.hash();
      const auto oh = online.params.hash();
      // target must equal an older online snapshot (or the current one right after a sync)
      const bool just_synced = (step + 1) % cfg.target_update_interval == 0;
      if (just_synced) {
        ++syncs_seen;
        if (th != oh) ++stale;
      } else if (std::find(online_hashes.begin(), online_hashes.end(), th) == online_hashes.end()) {
        ++stale;
      }
      online_hashes.push_back(oh);
    };
    const auto a = run_training({}, cfg, 11, 1500, hooks);
    CHECK(stale == 0);
    CHECK(syncs_seen == 150);
    const auto b = run_training({}, cfg, 11, 1500);
    REQUIRE(a.log.size() == b.log.size());
    CHECK(a.losses == b.losses);
    std::size_t last = 0;
    for (std::size_t i = 0; i < a.log.size(); ++i) {
      CHECK(a.log[i].ret == b.log[i].ret);
      CHECK(a.log[i].ret >= 1.0);
      CHECK(a.log[i].ret <= 500.0);
      CHECK(a.log[i].episode == i);
      CHECK(a.log[i].step > last);
      last = a.log[i].step;
    }
  }

  TEST_CASE("flags are inert at alpha zero") {
    auto cfg = small_cfg();
    cfg.alpha = 0.0;
    std::vector<std::uint64_t> hashes;
    for (bool tr : {true, false}) {
      for (bool te : {true, false}) {
        cfg.penalize_train = tr;
        cfg.penalize_test = te;
        const auto res = run_training({}, cfg, 12, 800);
        hashes.push_back(res.network.params.hash());
        CHECK(evaluate(res.network, {}, cfg.alpha_eff_test(), 3, 1) ==
              evaluate(res.network, {}, 0.0, 3, 1));
      }
    }
    CHECK(std::set<std::uint64_t>(hashes.begin(), hashes.end()).size() == 1);
  }

  TEST_CASE("penalize_train changes the run when alpha > 0") {
    auto cfg = small_cfg();
    cfg.alpha = 2.0;
    cfg.penalize_train = true;
    const auto on = run_training({}, cfg, 13, 800);
    cfg.penalize_train = false;
    const auto off = run_training({}, cfg, 13, 800);
    CHECK(on.network.params.hash() != off.network.params.hash());
    CHECK(on.log.front().alpha_eff_train == 2.0);
    CHECK(off.log.front().alpha_eff_train == 0.0);
  }

  TEST_CASE("checkpoint block round trip") {
    auto cfg = small_cfg();
    const auto res = run_training({}, cfg, 14, 200);
    const auto blk = to_block(res.network);
    const auto back = from_block(blk, 4, 2, cfg);
    CHECK(back.params.hash() == res.network.params.hash());
    auto other = cfg;
    other.hidden = {8};
    CHECK_THROWS_AS(from_block(blk, 4, 2, other), ConfigError);
  }
}

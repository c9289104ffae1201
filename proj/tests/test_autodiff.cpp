#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>
#include <set>

#include "doctest.h"
#include "gradcheck.hpp"
#include "rdrl/adam.hpp"
#include "rdrl/autodiff.hpp"
#include "rdrl/checkpoint.hpp"
#include "rdrl/errors.hpp"
#include "rdrl/mlp.hpp"

using namespace rdrl;
using namespace rdrl::ad;

TEST_SUITE("forward") {
  TEST_CASE("zero parameters give zero output") {
    MlpSpec spec{3, 2, {4}};
    std::mt19937_64 rng(1);
    ParamSet p = init_mlp(spec, rng);
    for (auto& t : p.tensors()) t.setZero();
    const Matrix out = mlp_predict(spec, p, Matrix::Random(5, 3));
    CHECK(out.isZero(0.0));
  }

  TEST_CASE("identity linear layer") {
    MlpSpec spec{3, 3, {}};
    ParamSet p({Matrix::Identity(3, 3), Matrix::Zero(1, 3)});
    Matrix x(2, 3);
    x << 1, -2, 3, 0.5, 0, -7;
    CHECK(mlp_predict(spec, p, x) == x);
  }

  TEST_CASE("2-3-1 network by hand") {
    MlpSpec spec{2, 1, {3}};
    Matrix w1(2, 3), b1(1, 3), w2(3, 1), b2(1, 1);
    w1 << 0.5, -1.0, 0.25, 2.0, 0.1, -0.3;
    b1 << 0.1, 0.2, -0.4;
    w2 << 1.5, -0.5, 2.0;
    b2 << 0.05;
    ParamSet p({w1, b1, w2, b2});
    Matrix x(1, 2);
    x << 0.3, -0.7;
    // hidden pre-activations, written out term by term
    const double h0 = 0.3 * 0.5 + -0.7 * 2.0 + 0.1;    // -1.15 -> 0
    const double h1 = 0.3 * -1.0 + -0.7 * 0.1 + 0.2;   // -0.17 -> 0
    const double h2 = 0.3 * 0.25 + -0.7 * -0.3 + -0.4; // -0.115 -> 0
    const double expect = std::max(h0, 0.0) * 1.5 + std::max(h1, 0.0) * -0.5 + std::max(h2, 0.0) * 2.0 + 0.05;
    CHECK(mlp_predict(spec, p, x)(0, 0) == doctest::Approx(expect).epsilon(1e-15));

    Matrix x2(1, 2);
    x2 << 2.0, 1.0;
    const double g0 = 2.0 * 0.5 + 1.0 * 2.0 + 0.1;
    const double g1 = 2.0 * -1.0 + 1.0 * 0.1 + 0.2;
    const double g2 = 2.0 * 0.25 + 1.0 * -0.3 + -0.4;
    const double e2 = std::max(g0, 0.0) * 1.5 + std::max(g1, 0.0) * -0.5 + std::max(g2, 0.0) * 2.0 + 0.05;
    CHECK(mlp_predict(spec, p, x2)(0, 0) == doctest::Approx(e2).epsilon(1e-15));
  }

  TEST_CASE("tape and inference paths agree") {
    MlpSpec spec{4, 3, {8, 8}};
    std::mt19937_64 rng(2);
    ParamSet p = init_mlp(spec, rng);
    const Matrix x = Matrix::Random(6, 4);
    Graph g;
    auto vars = g.bind(p);
    const Var out = mlp_forward(spec, vars, g.constant(x));
    CHECK((out.value() - mlp_predict(spec, p, x)).cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("shape mismatch") {
    MlpSpec spec{4, 3, {8}};
    std::mt19937_64 rng(2);
    ParamSet p = init_mlp(spec, rng);
    CHECK_THROWS_AS(mlp_predict(spec, p, Matrix::Zero(2, 3)), InvalidArgument);
    Graph g;
    CHECK_THROWS_AS(matmul(g.leaf(Matrix::Zero(2, 3)), g.leaf(Matrix::Zero(2, 3))), InvalidArgument);
  }

  TEST_CASE("init is uniform within the fan-in bound") {
    MlpSpec spec{16, 4, {32}};
    std::mt19937_64 rng(3);
    ParamSet p = init_mlp(spec, rng);
    CHECK(p[0].cwiseAbs().maxCoeff() <= 0.25);
    CHECK(p[2].cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(32.0));
  }
}

TEST_SUITE("gradients") {
  TEST_CASE("square at three") {
    Graph g;
    Var x = g.leaf(Matrix::Constant(1, 1, 3.0));
    g.backward(square(x));
    CHECK(x.grad()(0, 0) == 6.0);
  }

  TEST_CASE("constant output") {
    Graph g;
    Var x = g.leaf(Matrix::Constant(1, 1, 3.0));
    Var c = g.constant(Matrix::Constant(1, 1, 5.0));
    Var y = c + scale(x, 0.0);
    g.backward(y);
    CHECK(x.grad()(0, 0) == 0.0);
  }

  TEST_CASE("non-scalar output is rejected") {
    Graph g;
    Var x = g.leaf(Matrix::Ones(2, 2));
    CHECK_THROWS_AS(g.backward(x), InvalidArgument);
  }

  TEST_CASE("shared bindings accumulate") {
    MlpSpec spec{2, 1, {3}};
    std::mt19937_64 rng(4);
    ParamSet p = init_mlp(spec, rng);
    Graph g;
    auto a = g.bind(p);
    auto b = g.bind(p);
    const Matrix x = Matrix::Random(3, 2);
    Var loss = sum(mlp_forward(spec, a, g.constant(x))) + sum(mlp_forward(spec, b, g.constant(x)));
    auto twice = g.gradients(loss, p);
    Graph h;
    auto c = h.bind(p);
    auto once = h.gradients(sum(mlp_forward(spec, c, h.constant(x))), p);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK((twice[i] - 2.0 * once[i]).cwiseAbs().maxCoeff() < 1e-14);
  }

  TEST_CASE("frozen bindings get no gradient") {
    MlpSpec spec{2, 1, {3}};
    std::mt19937_64 rng(5);
    ParamSet p = init_mlp(spec, rng);
    Graph g;
    auto vars = g.bind(p, false);
    auto grads = g.gradients(sum(mlp_forward(spec, vars, g.constant(Matrix::Random(2, 2)))), p);
    for (const auto& m : grads) CHECK(m.isZero(0.0));
  }

  TEST_CASE("every op matches finite differences") {
    for (const auto& op : gradcheck::op_cases()) {
      const auto res = gradcheck::check_op(op, 10, 77);
      INFO(op.name, " max rel err ", res.max_rel_err);
      CHECK(res.max_rel_err <= 1e-4);
    }
  }

  TEST_CASE("all op kinds are covered") {
    std::set<OpKind> seen;
    std::mt19937_64 rng(1);
    for (const auto& op : gradcheck::op_cases()) {
      Graph g;
      std::vector<Var> vars;
      for (auto& m : op.inputs(rng)) vars.push_back(g.leaf(m));
      op.build(vars);
      for (std::size_t i = 0; i < g.size(); ++i) seen.insert(g.kind(Var(&g, i)));
    }
    for (int k = static_cast<int>(OpKind::Linear); k <= static_cast<int>(OpKind::QuantileHuber); ++k) {
      INFO("op kind ", k);
      CHECK(seen.count(static_cast<OpKind>(k)) == 1);
    }
  }
}

TEST_SUITE("huber") {
  TEST_CASE("examples") {
    CHECK(huber(0.0, 1.0) == 0.0);
    CHECK(huber(0.5, 1.0) == 0.125);
    CHECK(huber(2.0, 1.0) == 1.5);
  }

  TEST_CASE("even, continuous and once differentiable at the knee") {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(-10, 10), k(0.1, 3);
    for (int i = 0; i < 1000; ++i) {
      const double x = u(rng), kappa = k(rng);
      CHECK(huber(x, kappa) == huber(-x, kappa));
    }
    for (double kappa : {0.5, 1.0, 2.0}) {
      CHECK(huber(kappa - 1e-12, kappa) == doctest::Approx(huber(kappa + 1e-12, kappa)).epsilon(1e-10));
      CHECK(huber_derivative(kappa - 1e-12, kappa) == doctest::Approx(huber_derivative(kappa + 1e-12, kappa)));
    }
  }
}

TEST_SUITE("adam") {
  TEST_CASE("zero gradient leaves parameters unchanged") {
    ParamSet p({Matrix::Constant(2, 2, 0.7)});
    AdamState st(p, {LrSchedule::constant(0.1)});
    for (int i = 0; i < 5; ++i) adam_step(st, p, {Matrix::Zero(2, 2)});
    CHECK(p[0].isApprox(Matrix::Constant(2, 2, 0.7)));
    CHECK(p[0] == Matrix::Constant(2, 2, 0.7));
  }

  TEST_CASE("first step by hand") {
    ParamSet p({Matrix::Constant(1, 1, 1.0)});
    AdamState st(p, {LrSchedule::constant(0.1)});
    adam_step(st, p, {Matrix::Constant(1, 1, 1.0)});
    // m = 0.1, v = 0.001; bias-corrected both are 1, so the step is
    // 0.1 * 1 / (1 + 1e-8).
    CHECK(p[0](0, 0) == doctest::Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-15));
  }

  TEST_CASE("first step is lr times sign") {
    ParamSet p({Matrix::Zero(1, 4)});
    AdamState st(p, {LrSchedule::constant(0.01)});
    Matrix g(1, 4);
    g << 3.0, -0.2, 1e-3, -50.0;
    adam_step(st, p, {g});
    CHECK(p[0](0, 0) == doctest::Approx(-0.01));
    CHECK(p[0](0, 1) == doctest::Approx(0.01));
    CHECK(p[0](0, 2) == doctest::Approx(-0.01).epsilon(1e-4));
    CHECK(p[0](0, 3) == doctest::Approx(0.01));
  }

  TEST_CASE("linear schedule endpoint") {
    const auto s = LrSchedule::linear(7.3e-4, 1e-5, 1000);
    CHECK(s.at(0) == 7.3e-4);
    CHECK(s.at(1000) == 1e-5);
    CHECK(s.at(5000) == 1e-5);
    CHECK(s.at(500) == doctest::Approx((7.3e-4 + 1e-5) / 2));
  }

  TEST_CASE("gradient clipping bounds the applied norm") {
    ParamSet p({Matrix::Zero(1, 1)});
    AdamConfig cfg{LrSchedule::constant(0.1)};
    cfg.max_grad_norm = 1.0;
    AdamState st(p, cfg);
    adam_step(st, p, {Matrix::Constant(1, 1, 100.0)});
    CHECK(st.first_moment()[0](0, 0) == doctest::Approx(0.1));
  }

  TEST_CASE("moment shapes") {
    MlpSpec spec{3, 2, {4}};
    std::mt19937_64 rng(1);
    ParamSet p = init_mlp(spec, rng);
    AdamState st(p, {});
    REQUIRE(st.first_moment().size() == p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
      CHECK(st.first_moment()[i].rows() == p[i].rows());
      CHECK(st.second_moment()[i].cols() == p[i].cols());
    }
    CHECK_THROWS_AS(adam_step(st, p, {Matrix::Zero(1, 1)}), InvalidArgument);
  }

  TEST_CASE("identical seeds give bit-identical trajectories") {
    auto run = [] {
      MlpSpec spec{3, 2, {16, 16}};
      std::mt19937_64 rng(42);
      ParamSet p = init_mlp(spec, rng);
      AdamState st(p, {LrSchedule::linear(1e-2, 1e-3, 50)});
      std::vector<std::uint64_t> hashes;
      for (int it = 0; it < 50; ++it) {
        const Matrix x = gradcheck::rand_mat(rng, 8, 3, -1, 1);
        Graph g;
        auto vars = g.bind(p);
        Var loss = mean(square(mlp_forward(spec, vars, g.constant(x))));
        adam_step(st, p, g.gradients(loss, p));
        hashes.push_back(p.hash());
      }
      return hashes;
    };
    CHECK(run() == run());
  }
}

TEST_SUITE("parameters") {
  TEST_CASE("polyak examples") {
    ParamSet online({Matrix::Constant(1, 1, 1.0)});
    ParamSet target({Matrix::Constant(1, 1, 0.0)});
    polyak_update(online, target, 0.005);
    CHECK(target[0](0, 0) == doctest::Approx(0.005));
    ParamSet t2 = target;
    polyak_update(online, t2, 0.0);
    CHECK(t2[0] == target[0]);
    polyak_update(online, t2, 1.0);
    CHECK(t2[0] == online[0]);
  }

  TEST_CASE("flatten round trip and hash") {
    MlpSpec spec{3, 2, {4}};
    std::mt19937_64 rng(9);
    ParamSet p = init_mlp(spec, rng);
    ParamSet q = init_mlp(spec, rng);
    CHECK(p.hash() != q.hash());
    q.assign_flat(p.flatten());
    CHECK(p.hash() == q.hash());
    CHECK(p.scalar_count() == 3 * 4 + 4 + 4 * 2 + 2);
    CHECK(spec.describe() == "3:4:2");
  }

  TEST_CASE("checkpoint layout") {
    Checkpoint c;
    c.metadata = "{\"k\": 1}";
    c.blocks.push_back({"w", 0x1122334455667788ULL, {1.5, -2.0}});
    const auto bytes = encode_checkpoint(c);
    REQUIRE(bytes.size() == 8 + 4 + 4 + c.metadata.size() + 4 + 4 + 1 + 8 + 8 + 16);
    CHECK(std::memcmp(bytes.data(), "RDRLCKPT", 8) == 0);
    CHECK(bytes[8] == 1);  // version, little-endian
    CHECK(bytes[12] == c.metadata.size());
    // spec hash starts after magic, version, meta length, meta, count, name length, name
    const std::size_t h = 16 + c.metadata.size() + 4 + 4 + 1;
    CHECK(bytes[h] == 0x88);
    CHECK(bytes[h + 7] == 0x11);
    double v = 0.0;
    std::memcpy(&v, bytes.data() + h + 16, 8);
    CHECK(v == 1.5);

    const auto back = decode_checkpoint(bytes);
    CHECK(back.metadata == c.metadata);
    CHECK(back.block("w").values == c.blocks[0].values);
    CHECK(back.block("w").spec_hash == c.blocks[0].spec_hash);
    CHECK_THROWS_AS(back.block("missing"), InvalidArgument);

    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS(decode_checkpoint(bad));
    bad = bytes;
    bad.resize(bad.size() - 3);
    CHECK_THROWS(decode_checkpoint(bad));
  }

  TEST_CASE("checkpoint file round trip") {
    const auto path = std::filesystem::temp_directory_path() / "rdrl_test_ckpt.bin";
    Checkpoint c{"meta", {{"a", 7, {0.1, 0.2, 0.3}}}};
    save_checkpoint(path, c);
    const auto back = load_checkpoint(path);
    CHECK(back.block("a").values == c.blocks[0].values);
    std::filesystem::remove(path);
  }
}

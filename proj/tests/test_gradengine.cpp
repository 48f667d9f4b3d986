#include <doctest.h>

#include <cmath>
#include <fstream>

#include "fkee/adam.hpp"
#include "fkee/checkpoint.hpp"
#include "fkee/mlp.hpp"
#include "fkee/rng.hpp"
#include "fkee/tape.hpp"
#include "fd_oracles.hpp"

using namespace fkee;
using fkee::test::fd1;
using fkee::test::fd2;
using fkee::test::fd_mixed;
using fkee::test::rel_close;

namespace {

double net_value(const MLP& net, Vec x, double t) {
  Mat X(x.size() + 1, 1);
  X.col(0).head(x.size()) = x;
  X(x.size(), 0) = t;
  return net.forward(X)(0, 0);
}

MLPSpec random_spec(Rng& rng, int d) {
  MLPSpec s;
  s.input_dim = d + 1;
  s.output_dim = 1;
  const int layers = 1 + int(rng.below(2));
  for (int l = 0; l < layers; ++l) s.hidden.push_back(3 + int(rng.below(14)));
  return s;
}

}  // namespace

TEST_CASE("zero-weight network jet is the bias constant") {
  MLPSpec s{2, {8}, 1};
  MLP net(s, Vec::Zero(Eigen::Index(param_count(s))));
  net.params()[net.params().size() - 1] = 0.75;  // output bias
  Vec x(1);
  x << 0.3;
  Jet j = eval_with_jet(net, x, 0.2, HessMode::diagonal);
  CHECK(j.value == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(j.dt == 0.0);
  CHECK(j.grad_x[0] == 0.0);
  CHECK(j.hess_diag[0] == 0.0);
}

TEST_CASE("near-linear map: grad matches weights, hessian vanishes") {
  // one wide tanh layer with tiny input scale behaves linearly only in the
  // limit; instead check the exact linear identity through the composition
  // u(x,t) = W2 tanh(W1 [x;t]) at a point where we can evaluate by hand
  MLPSpec s{3, {4}, 1};
  MLP net = MLP::seeded(s, 7);
  Vec x(2);
  x << 0.4, -0.3;
  const double t0 = 0.6;
  Jet j = eval_with_jet(net, x, t0, HessMode::full);

  auto f = [&](Vec xv, double tv) { return net_value(net, xv, tv); };
  for (int i = 0; i < 2; ++i) {
    const double g = fd1([&](double v) { Vec xx = x; xx[i] = v; return f(xx, t0); }, x[i]);
    CHECK(rel_close(j.grad_x[i], g, 1e-6, 1e-9));
  }
  const double gt = fd1([&](double v) { return f(x, v); }, t0);
  CHECK(rel_close(j.dt, gt, 1e-6, 1e-9));
}

TEST_CASE("randomized jet suite vs central finite differences") {
  Rng rng(2024);
  int cases = 0;
  for (int trial = 0; trial < 120; ++trial) {
    const int d = 1 + int(rng.below(4));
    MLPSpec s = random_spec(rng, d);
    MLP net = MLP::seeded(s, rng.next_u64());
    Vec x(d);
    for (int i = 0; i < d; ++i) x[i] = rng.uniform(-1.5, 1.5);
    const double t0 = rng.uniform(0.0, 2.0);
    const HessMode mode = trial % 2 == 0 ? HessMode::diagonal : HessMode::full;
    Jet j = eval_with_jet(net, x, t0, mode);

    auto f = [&](const Vec& xv, double tv) { return net_value(net, xv, tv); };
    CHECK(rel_close(j.value, f(x, t0), 1e-12, 1e-12));
    CHECK(rel_close(j.dt, fd1([&](double v) { return f(x, v); }, t0), 1e-4, 1e-7));
    for (int i = 0; i < d; ++i) {
      const double g =
          fd1([&](double v) { Vec xx = x; xx[i] = v; return f(xx, t0); }, x[i]);
      CHECK(rel_close(j.grad_x[i], g, 1e-4, 1e-7));
      const double h2 =
          fd2([&](double v) { Vec xx = x; xx[i] = v; return f(xx, t0); }, x[i]);
      const double got = mode == HessMode::diagonal ? j.hess_diag[i] : j.hess(i, i);
      CHECK(rel_close(got, h2, 1e-4, 1e-7));
    }
    if (mode == HessMode::full) {
      for (int a = 0; a < d; ++a)
        for (int b = a + 1; b < d; ++b) {
          const double m = fd_mixed(
              [&](double u, double v) {
                Vec xx = x;
                xx[a] = u;
                xx[b] = v;
                return f(xx, t0);
              },
              x[a], x[b]);
          CHECK(rel_close(j.hess(a, b), m, 1e-4, 1e-7));
        }
    }
    ++cases;
  }
  CHECK(cases >= 100);
}

TEST_CASE("diagonal mode equals the diagonal of full mode") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const int d = 1 + int(rng.below(4));
    MLP net = MLP::seeded(random_spec(rng, d), rng.next_u64());
    Vec x(d);
    for (int i = 0; i < d; ++i) x[i] = rng.uniform(-2.0, 2.0);
    const double t0 = rng.uniform(0.0, 1.0);
    Jet jd = eval_with_jet(net, x, t0, HessMode::diagonal);
    Jet jf = eval_with_jet(net, x, t0, HessMode::full);
    for (int i = 0; i < d; ++i)
      CHECK(std::abs(jd.hess_diag[i] - jf.hess(i, i)) <= 1e-12);
  }
}

TEST_CASE("parameter gradients of jet losses match finite differences") {
  Rng rng(99);
  int cases = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const int d = 1 + int(rng.below(3));
    MLPSpec s = random_spec(rng, d);
    MLP net = MLP::seeded(s, rng.next_u64());
    const int B = 3;
    Mat X(d + 1, B);
    for (int j = 0; j < B; ++j) {
      for (int i = 0; i < d; ++i) X(i, j) = rng.uniform(-1.0, 1.0);
      X(d, j) = rng.uniform(0.0, 1.0);
    }
    // random PDE-like coefficients so every jet channel feeds the loss
    Mat bcoef(d, B), scoef(d, B);
    for (int j = 0; j < B; ++j)
      for (int i = 0; i < d; ++i) {
        bcoef(i, j) = rng.uniform(-1.0, 1.0);
        scoef(i, j) = rng.uniform(0.1, 1.0);
      }

    auto loss_value = [&](const MLP& n) {
      double acc = 0.0;
      for (int j = 0; j < B; ++j) {
        Jet jet = eval_with_jet(n, X.col(j).head(d), X(d, j), HessMode::diagonal);
        double r = jet.dt;
        for (int i = 0; i < d; ++i)
          r += jet.grad_x[i] * bcoef(i, j) +
               0.5 * scoef(i, j) * scoef(i, j) * jet.hess_diag[i];
        acc += r * r + 0.1 * jet.value * jet.value;
      }
      return acc / B;
    };

    Tape tape;
    const int block = tape.add_param_block(net.params().size());
    JetVars jv = tape_jet_call(tape, net, block, X, HessMode::diagonal);
    std::vector<Var> terms;
    for (int j = 0; j < B; ++j) {
      TV r{&tape, jv.dt[std::size_t(j)]};
      for (int i = 0; i < d; ++i) {
        r = r + TV{&tape, jv.gradx[std::size_t(i + d * j)]} * bcoef(i, j);
        r = r + TV{&tape, jv.curv[std::size_t(i + d * j)]} *
                    (0.5 * scoef(i, j) * scoef(i, j));
      }
      TV term = tsq(r) + 0.1 * tsq(TV{&tape, jv.value[std::size_t(j)]});
      terms.push_back(term.v);
    }
    Var loss = tape.mean(terms);
    CHECK(rel_close(tape.val(loss), loss_value(net), 1e-10, 1e-12));
    tape.backward(loss);
    const Vec grad = tape.param_grad(block);

    // probe a handful of coordinates with central differences
    const Eigen::Index np = net.params().size();
    for (int probe = 0; probe < 5; ++probe) {
      const Eigen::Index k = Eigen::Index(rng.below(std::uint64_t(np)));
      const double h = 1e-5;
      MLP plus = net, minus = net;
      plus.params()[k] += h;
      minus.params()[k] -= h;
      const double g = (loss_value(plus) - loss_value(minus)) / (2.0 * h);
      CHECK(rel_close(grad[k], g, 1e-3, 1e-8));
      ++cases;
    }
  }
  CHECK(cases >= 50);
}

TEST_CASE("loss_gradient is linear in the loss") {
  Rng rng(123);
  MLPSpec s{3, {6}, 1};
  MLP net = MLP::seeded(s, 11);
  Mat X(3, 2);
  X << 0.1, -0.4, 0.7, 0.2, 0.3, 0.9;

  auto grad_of = [&](double a, double b) {
    Tape tape;
    const int block = tape.add_param_block(net.params().size());
    JetVars jv = tape_jet_call(tape, net, block, X, HessMode::diagonal);
    TV l1 = tsq(TV{&tape, jv.value[0]}) + tsq(TV{&tape, jv.gradx[0]});
    TV l2 = tsq(TV{&tape, jv.dt[1]}) + tsq(TV{&tape, jv.curv[2]});
    TV total = a * l1 + b * l2;
    tape.backward(total.v);
    return Vec(tape.param_grad(block));
  };

  const Vec g10 = grad_of(1.0, 0.0);
  const Vec g01 = grad_of(0.0, 1.0);
  const Vec gab = grad_of(2.5, -1.5);
  const Vec lin = 2.5 * g10 - 1.5 * g01;
  CHECK((gab - lin).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("value call with var inputs backpropagates to the inputs") {
  // f(x) = net(x,t); check d f / d x via tape vs finite differences
  Rng rng(77);
  MLPSpec s{3, {8, 5}, 2};
  MLP net = MLP::seeded(s, rng.next_u64());
  Vec x0(3);
  x0 << 0.2, -0.6, 0.4;

  Tape tape;
  const int block = tape.add_param_block(net.params().size());
  std::vector<Var> xv;
  for (int i = 0; i < 3; ++i) xv.push_back(tape.leaf(x0[i]));
  auto ys = tape_value_call(tape, net, block, xv, 1);
  TV loss = tsq(TV{&tape, ys[0]}) + 3.0 * TV{&tape, ys[1]};
  tape.backward(loss.v);

  auto value = [&](const Vec& xx) {
    Mat X = xx;
    Mat Y = net.forward(X);
    return Y(0, 0) * Y(0, 0) + 3.0 * Y(1, 0);
  };
  for (int i = 0; i < 3; ++i) {
    const double g = fd1([&](double v) { Vec xx = x0; xx[i] = v; return value(xx); },
                         x0[i], 1e-5);
    CHECK(rel_close(tape.adj(xv[std::size_t(i)]), g, 1e-5, 1e-9));
  }
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  Vec p(3);
  p << 1.0, -2.0, 3.0;
  OptimizerState st = OptimizerState::make(3);
  auto [p2, st2] = adam_update(st, p, Vec::Zero(3));
  CHECK((p2 - p).cwiseAbs().maxCoeff() == 0.0);
  CHECK(st2.step == 1);
}

TEST_CASE("adam: first step from zero state is -lr * sign(g) up to eps") {
  Vec p = Vec::Zero(2);
  Vec g(2);
  g << 0.5, -3.0;
  OptimizerState st = OptimizerState::make(2, 1e-3);
  auto [p2, st2] = adam_update(st, p, g);
  // with zero moments, mhat = g, vhat = g^2, update = lr*g/(|g|+eps)
  for (int i = 0; i < 2; ++i) {
    const double want = -st.lr * g[i] / (std::abs(g[i]) + st.eps);
    CHECK(p2[i] == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("adam: constant gradient drives update magnitude toward lr") {
  Vec p = Vec::Zero(1);
  Vec g(1);
  g << 0.25;
  OptimizerState st = OptimizerState::make(1, 1e-3);
  Vec prev = p;
  for (int i = 0; i < 2000; ++i) {
    prev = p;
    adam_step(st, p, g);
  }
  CHECK(std::abs((prev - p)[0]) == doctest::Approx(st.lr).epsilon(0.05));
}

TEST_CASE("checkpoint round-trip is bit exact and version checked") {
  MLPSpec s{4, {7, 3}, 2};
  MLP net = MLP::seeded(s, 31337);
  const std::string path = "ckpt_test_net.txt";
  save_mlp(path, net);
  MLP back = load_mlp(path);
  REQUIRE(back.spec() == net.spec());
  for (Eigen::Index i = 0; i < net.params().size(); ++i)
    CHECK(back.params()[i] == net.params()[i]);

  // corrupted header must refuse to load
  {
    std::ofstream os(path);
    os << "fkee-ckpt-v0\nmlp net 4 2 2 7 3\nparams 0\n";
  }
  CHECK_THROWS_AS((void)load_mlp(path), ConfigError);
}

TEST_CASE("tape scalar ops agree with finite differences") {
  Rng rng(4242);
  for (int trial = 0; trial < 30; ++trial) {
    const double a = rng.uniform(0.1, 2.0);
    const double b = rng.uniform(0.1, 2.0);
    auto build = [&](double av, double bv) {
      Tape tp;
      TV x{&tp, tp.leaf(av)};
      TV y{&tp, tp.leaf(bv)};
      TV z = texp(x * y) + tlog(x + 1.5) / (y + 0.5) - tsqrt(x) + tsq(y) * 0.3;
      return std::pair{tp.val(z.v), z};
    };
    Tape tp;
    TV x{&tp, tp.leaf(a)};
    TV y{&tp, tp.leaf(b)};
    TV z = texp(x * y) + tlog(x + 1.5) / (y + 0.5) - tsqrt(x) + tsq(y) * 0.3;
    tp.backward(z.v);
    const double ga =
        fd1([&](double v) { return build(v, b).first; }, a, 1e-6);
    const double gb =
        fd1([&](double v) { return build(a, v).first; }, b, 1e-6);
    CHECK(rel_close(tp.adj(x.v), ga, 1e-5, 1e-9));
    CHECK(rel_close(tp.adj(y.v), gb, 1e-5, 1e-9));
  }
}

TEST_CASE("softplus on the tape matches closed form and gradient") {
  Tape tp;
  TV x{&tp, tp.leaf(0.3)};
  Var sp = tp.softplus(x.v);
  CHECK(tp.val(sp) == doctest::Approx(std::log1p(std::exp(0.3))).epsilon(1e-14));
  tp.backward(sp);
  CHECK(tp.adj(x.v) == doctest::Approx(1.0 / (1.0 + std::exp(-0.3))).epsilon(1e-12));
}

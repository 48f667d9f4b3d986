#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "fkee/bridge.hpp"
#include "fkee/rng.hpp"
#include "fd_oracles.hpp"

using namespace fkee;
using fkee::test::rel_close;

namespace {

SampleCloud const_cloud(int n, double value) {
  SampleCloud c;
  c.points = Mat::Constant(n, 1, value);
  return c;
}

SampleCloud random_cloud(Rng& rng, int n, int d, double center = 0.0,
                         double scale = 1.0) {
  SampleCloud c;
  c.points = Mat(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) c.points(i, j) = center + scale * rng.normal();
  return c;
}

void set_output_bias(MLP& net, double v) {
  const auto bmap = net.b(net.maps() - 1);
  const Eigen::Index off = bmap.data() - net.params().data();
  for (Eigen::Index i = 0; i < bmap.size(); ++i) net.params()[off + i] = v;
}

// drift identically zero, diffusion pinned to the softplus floor
BridgeModel degenerate_model(int d, const TimeGrid& grid, const Vec& start) {
  BridgeModel m = BridgeModel::make(d, grid, {4}, 1);
  m.drift.params().setZero();
  m.diffusion.params().setZero();
  set_output_bias(m.diffusion, -20.0);
  m.theta3 = start;
  return m;
}

SampleCloud cloud_at_step(const PathBatch& batch, int k) {
  SampleCloud c;
  c.points = Mat(batch.n_paths, batch.d);
  for (int p = 0; p < batch.n_paths; ++p)
    for (int i = 0; i < batch.d; ++i) c.points(p, i) = batch.state(p, k, i);
  return c;
}

double gauss_pdf(double x, double mean, double var) {
  return std::exp(-(x - mean) * (x - mean) / (2.0 * var)) /
         std::sqrt(2.0 * std::numbers::pi * var);
}

// trapezoid integral of N(.;m1,v1) * N(.;m2,v2), the independent quadrature
// piece behind every closed-form check below
double quad_gauss_product(double m1, double v1, double m2, double v2) {
  const double sd = std::sqrt(std::max(v1, v2));
  const double lo = std::min(m1, m2) - 12.0 * sd, hi = std::max(m1, m2) + 12.0 * sd;
  const int n = 40000;
  const double dx = (hi - lo) / n;
  double acc = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double x = lo + dx * i;
    const double w = (i == 0 || i == n) ? 0.5 : 1.0;
    acc += w * gauss_pdf(x, m1, v1) * gauss_pdf(x, m2, v2);
  }
  return acc * dx;
}

double quad_l2_sq_1d(double m1, double v1, double m2, double v2) {
  return quad_gauss_product(m1, v1, m1, v1) + quad_gauss_product(m2, v2, m2, v2) -
         2.0 * quad_gauss_product(m1, v1, m2, v2);
}

// model's own one-step Euler kernel, evaluated through the numeric forward
GaussianKernel euler_kernel(const BridgeModel& m) {
  GaussianKernel k;
  k.step_h = m.grid.h;
  k.mean = [m](const Vec& x, double t) -> Vec {
    return x + m.drift_at(x, t) * m.grid.h;
  };
  k.var_diag = [m](const Vec& x, double t) -> Vec {
    return (m.sigma_at(x, t).array().square() * m.grid.h).matrix();
  };
  return k;
}

}  // namespace

TEST_CASE("model construction and coefficient evaluation") {
  const TimeGrid grid{0.0, 0.25, 4};
  const BridgeModel m = BridgeModel::make(2, grid, {5, 4}, 42);
  CHECK(m.d() == 2);
  CHECK(m.theta3.isZero());
  CHECK(m.drift.spec().input_dim == 3);
  CHECK(m.drift.spec().output_dim == 2);
  Vec x(2);
  x << 0.3, -0.4;
  const Vec sg = m.sigma_at(x, 0.5);
  CHECK((sg.array() >= kSigmaFloor).all());
  // softplus of the raw net output plus the floor
  const Vec raw = m.diffusion.forward((Mat(3, 1) << 0.3, -0.4, 0.5).finished()).col(0);
  for (int i = 0; i < 2; ++i)
    CHECK(sg[i] ==
          doctest::Approx(std::log1p(std::exp(raw[i])) + kSigmaFloor).epsilon(1e-12));
  const SDECoefficients c = m.coefficients();
  CHECK(c.diagonal);
  CHECK((c.drift(x, 0.5) - m.drift_at(x, 0.5)).norm() == 0.0);
  CHECK((c.diff_diag(x, 0.5) - sg).norm() == 0.0);
  CHECK_THROWS_AS(BridgeModel::make(0, grid, {4}, 1), ConfigError);
  CHECK_THROWS_AS(BridgeModel::make(1, TimeGrid{0.0, 0.0, 4}, {4}, 1), ConfigError);
}

TEST_CASE("terminal loss vanishes against the model's own samples") {
  const TimeGrid grid{0.0, 0.2, 5};
  const BridgeModel m = BridgeModel::make(2, grid, {6}, 7);
  const PathBatch batch = bridge_paths(m, 10, 321);
  const SampleCloud own = cloud_at_step(batch, grid.M);
  CHECK(terminal_loss(m, own, NoiseSource(321)) <= 1e-10);
  // a different noise stream gives strictly positive distance
  CHECK(terminal_loss(m, own, NoiseSource(322)) > 1e-4);
}

TEST_CASE("terminal loss recovers the start offset when the nets are inert") {
  const TimeGrid grid{0.0, 0.1, 10};
  Vec start(1);
  start << 1.3;
  const BridgeModel m = degenerate_model(1, grid, start);
  const double loss = terminal_loss(m, const_cloud(6, 2.1), NoiseSource(5));
  CHECK(loss == doctest::Approx(0.8).epsilon(1e-3));
}

TEST_CASE("chain loss vanishes on marginals the model generated") {
  const TimeGrid grid{0.0, 0.25, 6};
  const BridgeModel m = BridgeModel::make(2, grid, {5}, 9);
  const PathBatch batch = bridge_paths(m, 12, 500);
  ChainMarginals targets;
  for (int k : {2, 4, 6}) {
    targets.times.push_back(grid.time(k));
    targets.clouds.push_back(cloud_at_step(batch, k));
  }
  CHECK(chain_loss(m, targets, NoiseSource(500)) <= 1e-10);
}

TEST_CASE("single terminal moment reduces the chain loss to the terminal loss") {
  const TimeGrid grid{0.0, 0.2, 4};
  const BridgeModel m = BridgeModel::make(1, grid, {4}, 15);
  Rng rng(31);
  const SampleCloud data = random_cloud(rng, 8, 1, 0.4, 0.6);
  ChainMarginals targets;
  targets.times = {grid.T()};
  targets.clouds = {data};
  const double chain = chain_loss(m, targets, NoiseSource(91));
  const double term = terminal_loss(m, data, NoiseSource(91));
  CHECK(chain == doctest::Approx(term).epsilon(1e-15));
}

TEST_CASE("chain loss validates its targets") {
  const TimeGrid grid{0.0, 0.1, 10};
  const BridgeModel m = BridgeModel::make(1, grid, {4}, 3);
  Rng rng(8);
  const SampleCloud cloud = random_cloud(rng, 5, 1);
  ChainMarginals off_grid;
  off_grid.times = {0.123};
  off_grid.clouds = {cloud};
  CHECK_THROWS_AS(chain_loss(m, off_grid, NoiseSource(1)), ConfigError);
  ChainMarginals at_start;
  at_start.times = {0.0};
  at_start.clouds = {cloud};
  CHECK_THROWS_AS(chain_loss(m, at_start, NoiseSource(1)), ConfigError);
  ChainMarginals unsorted;
  unsorted.times = {0.5, 0.3};
  unsorted.clouds = {cloud, cloud};
  CHECK_THROWS_AS(chain_loss(m, unsorted, NoiseSource(1)), ConfigError);
  ChainMarginals ragged;
  ragged.times = {0.3, 0.5};
  ragged.clouds = {cloud, random_cloud(rng, 6, 1)};
  CHECK_THROWS_AS(chain_loss(m, ragged, NoiseSource(1)), ConfigError);
  CHECK_THROWS_AS(chain_loss(m, ChainMarginals{}, NoiseSource(1)), ConfigError);
}

TEST_CASE("gaussian l2 distance matches quadrature") {
  Vec m1(1), v1(1), m2(1), v2(1);
  m1 << 0.2;
  v1 << 0.09;
  CHECK(gaussian_l2_sq(m1, v1, m1, v1) <= 1e-15);

  // equal variances collapse to the closed form (1/(s sqrt(pi)))(1 - exp(-D^2/(4 s^2)))
  m2 << 1.1;
  v2 << 0.09;
  const double s = 0.3, delta = 0.9;
  const double closed =
      (1.0 - std::exp(-delta * delta / (4.0 * s * s))) / (s * std::sqrt(std::numbers::pi));
  CHECK(gaussian_l2_sq(m1, v1, m2, v2) == doctest::Approx(closed).epsilon(1e-12));
  CHECK(gaussian_l2_sq(m1, v1, m2, v2) ==
        doctest::Approx(quad_l2_sq_1d(0.2, 0.09, 1.1, 0.09)).epsilon(1e-7));

  v2 << 0.25;
  CHECK(gaussian_l2_sq(m1, v1, m2, v2) ==
        doctest::Approx(quad_l2_sq_1d(0.2, 0.09, 1.1, 0.25)).epsilon(1e-7));

  // two dimensions factor into products of the 1-d integrals
  Vec am(2), av(2), bm(2), bv(2);
  am << 0.2, -0.5;
  av << 0.09, 0.16;
  bm << 0.7, -0.1;
  bv << 0.25, 0.04;
  const double self_a = quad_gauss_product(0.2, 0.09, 0.2, 0.09) *
                        quad_gauss_product(-0.5, 0.16, -0.5, 0.16);
  const double self_b = quad_gauss_product(0.7, 0.25, 0.7, 0.25) *
                        quad_gauss_product(-0.1, 0.04, -0.1, 0.04);
  const double cross = quad_gauss_product(0.2, 0.09, 0.7, 0.25) *
                       quad_gauss_product(-0.5, 0.16, -0.1, 0.04);
  CHECK(gaussian_l2_sq(am, av, bm, bv) ==
        doctest::Approx(self_a + self_b - 2.0 * cross).epsilon(1e-7));
  CHECK_THROWS_AS(gaussian_l2_sq(am, av, m2, v2), ConfigError);
}

TEST_CASE("transition loss vanishes on the model's own euler kernel") {
  const TimeGrid grid{0.0, 0.1, 8};
  const BridgeModel m = BridgeModel::make(2, grid, {5}, 23);
  Rng rng(17);
  const SampleCloud anchors = random_cloud(rng, 6, 2, 0.0, 0.8);
  CHECK(transition_density_loss(m, euler_kernel(m), anchors, m.theta3) <= 1e-10);

  // shifted kernel mean turns the density mismatch on
  GaussianKernel shifted = euler_kernel(m);
  auto base_mean = shifted.mean;
  shifted.mean = [base_mean](const Vec& x, double t) -> Vec {
    return base_mean(x, t).array() + 0.3;
  };
  CHECK(transition_density_loss(m, shifted, anchors, m.theta3) > 1e-3);

  // the start penalty is (theta3 - x0)^2 summed over components
  Vec far = m.theta3.array() + 1.0;
  const double with_pen = transition_density_loss(m, euler_kernel(m), anchors, far);
  CHECK(with_pen == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("transition loss rejects bad kernels") {
  const TimeGrid grid{0.0, 0.1, 4};
  const BridgeModel m = BridgeModel::make(1, grid, {4}, 2);
  Rng rng(3);
  const SampleCloud anchors = random_cloud(rng, 3, 1);
  GaussianKernel k = euler_kernel(m);
  k.is_gaussian = false;
  CHECK_THROWS_AS(transition_density_loss(m, k, anchors, m.theta3), ConfigError);
  GaussianKernel zero_var = euler_kernel(m);
  zero_var.var_diag = [](const Vec& x, double) -> Vec { return Vec::Zero(x.size()); };
  CHECK_THROWS_AS(transition_density_loss(m, zero_var, anchors, m.theta3), ConfigError);
  CHECK_THROWS_AS(transition_density_loss(m, euler_kernel(m), anchors, Vec::Zero(2)),
                  ConfigError);
}

TEST_CASE("fit stops before the first update when the loss already clears epsilon") {
  const TimeGrid grid{0.0, 0.1, 5};
  BridgeModel m = BridgeModel::make(1, grid, {4}, 5);
  const Vec drift_before = m.drift.params();
  const Vec diff_before = m.diffusion.params();
  BridgeFitConfig cfg;
  cfg.epochs = 50;
  cfg.epsilon = 1e9;
  cfg.noise_seed = 11;
  const auto [fitted, rep] = fit(m, BridgeObjective::terminal(const_cloud(8, 2.0)), cfg);
  CHECK(rep.epochs_run == 0);
  CHECK(rep.stop_reason == "threshold");
  CHECK(rep.trace.empty());
  CHECK(rep.final_loss ==
        doctest::Approx(terminal_loss(m, const_cloud(8, 2.0), NoiseSource(11)))
            .epsilon(1e-15));
  CHECK(fitted.drift.params() == drift_before);
  CHECK(fitted.diffusion.params() == diff_before);
  CHECK(fitted.theta3 == m.theta3);
}

TEST_CASE("fit with a zero budget reports and changes nothing") {
  const TimeGrid grid{0.0, 0.1, 5};
  BridgeModel m = BridgeModel::make(1, grid, {4}, 5);
  BridgeFitConfig cfg;
  cfg.epochs = 0;
  cfg.noise_seed = 11;
  const auto [fitted, rep] = fit(m, BridgeObjective::terminal(const_cloud(8, 2.0)), cfg);
  CHECK(rep.epochs_run == 0);
  CHECK(rep.stop_reason == "budget");
  CHECK(rep.trace.empty());
  CHECK(fitted.drift.params() == m.drift.params());
  BridgeFitConfig bad = cfg;
  bad.lr = 0.0;
  CHECK_THROWS_AS(fit(m, BridgeObjective::terminal(const_cloud(8, 2.0)), bad),
                  ConfigError);
}

TEST_CASE("fit pulls the bridge onto a point mass") {
  const TimeGrid grid{0.0, 0.1, 5};
  const BridgeModel m = BridgeModel::make(1, grid, {4}, 42);
  const SampleCloud target = const_cloud(40, 0.8);
  const double before = terminal_loss(m, target, NoiseSource(9));
  BridgeFitConfig cfg;
  cfg.epochs = 300;
  cfg.lr = 0.02;
  cfg.noise_seed = 9;
  const auto [fitted, rep] = fit(m, BridgeObjective::terminal(target), cfg);
  CHECK(rep.stop_reason == "budget");
  CHECK(rep.epochs_run == 300);
  CHECK(rep.final_loss <= before / 10.0);
  // the displacement splits between theta3 and the drift net, so only the
  // terminal law is pinned down; theta3 just has to pull its weight
  CHECK(fitted.theta3[0] > 0.1);
  const SampleCloud cloud = resample(fitted, 200, 1234);
  CHECK(std::abs(cloud.points.col(0).mean() - 0.8) <= 0.05);
}

TEST_CASE("loss gradient in the start point is live whenever the fit is off") {
  const TimeGrid grid{0.0, 0.1, 5};
  const BridgeModel m = BridgeModel::make(1, grid, {4}, 6);
  Tape tp;
  BridgeVars bv = make_bridge_vars(tp, m);
  const TV loss =
      tape_terminal_loss(tp, m, bv, const_cloud(6, 3.0), NoiseSource(2),
                         BridgeLossKind::w2_marginal, {});
  CHECK(loss.val() > 1.0);
  tp.backward(loss.v);
  CHECK(std::abs(tp.adj(bv.theta3[0].v)) > 1e-6);
}

TEST_CASE("tape losses match finite differences in every parameter group") {
  const TimeGrid grid{0.0, 0.2, 3};
  const BridgeModel m = BridgeModel::make(1, grid, {3}, 77);
  Rng rng(5);
  const SampleCloud data = random_cloud(rng, 4, 1, 0.5, 0.3);
  const NoiseSource noise(88);

  ChainMarginals targets;
  targets.times = {grid.time(1), grid.time(3)};
  targets.clouds = {random_cloud(rng, 4, 1, 0.2, 0.2), random_cloud(rng, 4, 1, 0.5, 0.3)};

  GaussianKernel kernel;
  kernel.step_h = grid.h;
  kernel.mean = [](const Vec& x, double) -> Vec { return 0.9 * x.array() + 0.05; };
  kernel.var_diag = [](const Vec& x, double) -> Vec {
    return 0.04 + 0.01 * x.array().square();
  };
  Vec x0(1);
  x0 << 0.2;
  const SampleCloud anchors = random_cloud(rng, 3, 1, 0.0, 0.7);

  enum class Which { terminal, chain, transition };
  const auto scalar_loss = [&](const BridgeModel& model, Which which) {
    if (which == Which::terminal) return terminal_loss(model, data, noise);
    if (which == Which::chain) return chain_loss(model, targets, noise);
    return transition_density_loss(model, kernel, anchors, x0);
  };

  for (Which which : {Which::terminal, Which::chain, Which::transition}) {
    Tape tp;
    BridgeVars bv = make_bridge_vars(tp, m);
    TV loss{&tp, kNoVar};
    if (which == Which::terminal)
      loss = tape_terminal_loss(tp, m, bv, data, noise, BridgeLossKind::w2_marginal, {});
    else if (which == Which::chain)
      loss = tape_chain_loss(tp, m, bv, targets, noise, BridgeLossKind::w2_marginal, {});
    else
      loss = tape_transition_loss(tp, m, bv, kernel, anchors, x0);
    CHECK(loss.val() == doctest::Approx(scalar_loss(m, which)).epsilon(1e-12));
    tp.backward(loss.v);

    const double g3 = tp.adj(bv.theta3[0].v);
    const double g3_fd = fkee::test::fd1(
        [&](double x) {
          BridgeModel p = m;
          p.theta3[0] = x;
          return scalar_loss(p, which);
        },
        m.theta3[0], 1e-5);
    CHECK(rel_close(g3, g3_fd, 1e-4, 1e-7));

    const Vec gd = tp.param_grad(bv.drift_block);
    const Vec gs = tp.param_grad(bv.diff_block);
    const std::vector<Eigen::Index> picks = {0, gd.size() / 2, gd.size() - 1};
    for (const Eigen::Index j : picks) {
      const double fd_d = fkee::test::fd1(
          [&](double x) {
            BridgeModel p = m;
            p.drift.params()[j] = x;
            return scalar_loss(p, which);
          },
          m.drift.params()[j], 1e-5);
      CHECK(rel_close(gd[j], fd_d, 1e-4, 1e-7));
      const double fd_s = fkee::test::fd1(
          [&](double x) {
            BridgeModel p = m;
            p.diffusion.params()[j] = x;
            return scalar_loss(p, which);
          },
          m.diffusion.params()[j], 1e-5);
      CHECK(rel_close(gs[j], fd_s, 1e-4, 1e-7));
    }
  }
}

TEST_CASE("resample concentrates at the start when the diffusion sits on the floor") {
  const TimeGrid grid{0.0, 0.125, 8};
  Vec start(2);
  start << 0.3, -0.7;
  const BridgeModel m = degenerate_model(2, grid, start);
  const SampleCloud cloud = resample(m, 200, 77);
  CHECK(cloud.n() == 200);
  for (int p = 0; p < cloud.n(); ++p)
    for (int i = 0; i < 2; ++i)
      CHECK(std::abs(cloud.points(p, i) - start[i]) <= 6e-4);
  CHECK(std::abs(cloud.points.col(0).mean() - 0.3) <= 1e-4);
  CHECK(std::abs(cloud.points.col(1).mean() + 0.7) <= 1e-4);
}

TEST_CASE("resample is seed-deterministic and seed-sensitive") {
  const TimeGrid grid{0.0, 0.2, 5};
  const BridgeModel m = BridgeModel::make(1, grid, {4}, 19);
  const SampleCloud a = resample(m, 30, 100);
  const SampleCloud b = resample(m, 30, 100);
  CHECK(a.points == b.points);
  const SampleCloud c = resample(m, 30, 101);
  CHECK(a.points != c.points);
}

TEST_CASE("budget advisor honors the euler error bound") {
  // L = 0 collapses the bound to C sqrt(h) <= eps with the horizon unbounded
  const BudgetAdvice flat = budget_advisor(0.0, 1.0, 0.1, 100);
  CHECK(flat.feasible);
  CHECK(flat.h == doctest::Approx(0.01).epsilon(1e-9));
  CHECK(flat.steps == 100);
  CHECK(flat.T == doctest::Approx(1.0).epsilon(1e-9));

  const BudgetAdvice tiny = budget_advisor(0.0, 1.0, 0.1, 1);
  CHECK(tiny.feasible);
  CHECK(tiny.steps == 1);
  CHECK(tiny.T == doctest::Approx(tiny.h).epsilon(1e-12));

  // replicate the advertised search on the same descending log grid
  const double L = 1.0, C = 1.0, eps = 0.05;
  const int M0 = 1000;
  const BudgetAdvice got = budget_advisor(L, C, eps, M0);
  REQUIRE(got.feasible);
  bool matched = false;
  for (int k = 0; k >= -48 && !matched; --k) {
    const double h = std::pow(10.0, double(k) / 8.0);
    int best = 0;
    for (int steps = 1; steps <= M0; ++steps) {
      const double bound = C * std::sqrt(h) * std::exp(4.0 * L * L * steps * h);
      if (bound <= eps * (1.0 + 1e-12)) best = steps;
    }
    if (best >= 1) {
      CHECK(got.h == doctest::Approx(h).epsilon(1e-12));
      CHECK(got.steps == best);
      CHECK(got.T == doctest::Approx(best * h).epsilon(1e-12));
      matched = true;
    }
  }
  CHECK(matched);
  // the returned budget satisfies the bound it advertises
  CHECK(C * std::sqrt(got.h) * std::exp(4.0 * L * L * got.T) <= eps * (1.0 + 1e-9));

  const BudgetAdvice impossible = budget_advisor(0.0, 1.0, 1e-9, 10);
  CHECK(!impossible.feasible);
  CHECK(impossible.steps == 0);
  CHECK_THROWS_AS(budget_advisor(-1.0, 1.0, 0.1, 10), ConfigError);
  CHECK_THROWS_AS(budget_advisor(1.0, 0.0, 0.1, 10), ConfigError);
  CHECK_THROWS_AS(budget_advisor(1.0, 1.0, 0.0, 10), ConfigError);
  CHECK_THROWS_AS(budget_advisor(1.0, 1.0, 0.1, 0), ConfigError);
}

TEST_CASE("bridge checkpoints round-trip and refuse foreign versions") {
  const TimeGrid grid{0.25, 0.125, 6};
  BridgeModel m = BridgeModel::make(2, grid, {5, 4}, 11);
  m.theta3 << 0.1, -0.2;
  m.drift.params()[3] += 0.5;
  m.diffusion.params()[7] -= 0.25;
  const std::string path = "bridge_ckpt_tmp.txt";
  save_bridge(path, m);
  const BridgeModel r = load_bridge(path);
  CHECK(r.grid.t0 == m.grid.t0);
  CHECK(r.grid.h == m.grid.h);
  CHECK(r.grid.M == m.grid.M);
  CHECK(r.theta3 == m.theta3);
  CHECK(r.drift.spec() == m.drift.spec());
  CHECK(r.diffusion.spec() == m.diffusion.spec());
  CHECK(r.drift.params() == m.drift.params());
  CHECK(r.diffusion.params() == m.diffusion.params());
  CHECK(resample(r, 5, 3).points == resample(m, 5, 3).points);
  std::remove(path.c_str());

  std::ofstream out(path);
  out << "fkee-ckpt-v9\n";
  out.close();
  try {
    load_bridge(path);
    FAIL("expected a version refusal");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("version mismatch") != std::string::npos);
  }
  std::remove(path.c_str());
  CHECK_THROWS_AS(load_bridge("no_such_checkpoint_file.txt"), ConfigError);
}

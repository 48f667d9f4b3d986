#include "fkee/bridge.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include "fkee/adam.hpp"
#include "fkee/checkpoint.hpp"

namespace fkee {

namespace {

Mat stack_xt(const Vec& x, double t) {
  Mat X(x.size() + 1, 1);
  X.col(0).head(x.size()) = x;
  X(x.size(), 0) = t;
  return X;
}

double softplus_floor(double z) {
  const double sp = z > 30.0 ? z : std::log1p(std::exp(z));
  return sp + kSigmaFloor;
}

std::vector<TV> cloud_leaves(Tape& tp, const SampleCloud& c) {
  std::vector<TV> v(std::size_t(c.n()) * std::size_t(c.d()));
  for (int p = 0; p < c.n(); ++p)
    for (int i = 0; i < c.d(); ++i)
      v[std::size_t(p * c.d() + i)] = TV{&tp, tp.leaf(c.points(p, i))};
  return v;
}

TV cloud_distance(Tape& tp, const std::vector<TV>& sim, const std::vector<TV>& data,
                  int n, int d, BridgeLossKind kind, const SinkhornConfig& sk) {
  if (kind == BridgeLossKind::w2_marginal)
    return tape_w2_marginal_sum(tp, sim, data, n, d);
  return tape_sinkhorn(tp, sim, data, n, n, d, sk);
}

// grid step for a target time, or -1 when the time is off the grid
int grid_step(const TimeGrid& g, double t) {
  const int k = int(std::lround((t - g.t0) / g.h));
  if (k < 1 || k > g.M) return -1;
  if (std::abs(g.time(k) - t) > 1e-9 * std::max(1.0, std::abs(t))) return -1;
  return k;
}

}  // namespace

Vec BridgeModel::drift_at(const Vec& x, double t) const {
  return drift.forward(stack_xt(x, t)).col(0);
}

Vec BridgeModel::sigma_at(const Vec& x, double t) const {
  Vec raw = diffusion.forward(stack_xt(x, t)).col(0);
  for (Eigen::Index i = 0; i < raw.size(); ++i) raw[i] = softplus_floor(raw[i]);
  return raw;
}

SDECoefficients BridgeModel::coefficients() const {
  SDECoefficients c;
  c.drift = [m = *this](const Vec& x, double t) { return m.drift_at(x, t); };
  c.diff_diag = [m = *this](const Vec& x, double t) { return m.sigma_at(x, t); };
  c.diagonal = true;
  return c;
}

BridgeModel BridgeModel::make(int d, const TimeGrid& grid,
                              const std::vector<int>& hidden, std::uint64_t seed) {
  require(d >= 1, "bridge dimension must be >= 1");
  require(grid.h > 0 && grid.M >= 1, "bridge grid must have h > 0 and M >= 1");
  BridgeModel m;
  MLPSpec spec{d + 1, hidden, d};
  m.drift = MLP::seeded(spec, seed);
  m.diffusion = MLP::seeded(spec, seed ^ 0xDA3E39CB94B95BDBull);
  m.theta3 = Vec::Zero(d);
  m.grid = grid;
  return m;
}

BridgeObjective BridgeObjective::terminal(SampleCloud cloud) {
  BridgeObjective o;
  o.kind = Kind::terminal;
  o.data = std::move(cloud);
  return o;
}

BridgeObjective BridgeObjective::chain(ChainMarginals marg) {
  BridgeObjective o;
  o.kind = Kind::chain;
  o.targets = std::move(marg);
  return o;
}

BridgeObjective BridgeObjective::transition(GaussianKernel k, SampleCloud anchors,
                                            Vec x0) {
  BridgeObjective o;
  o.kind = Kind::transition;
  o.kernel = std::move(k);
  o.anchors = std::move(anchors);
  o.x0 = std::move(x0);
  return o;
}

BridgeVars make_bridge_vars(Tape& tp, const BridgeModel& m) {
  BridgeVars bv;
  bv.drift_block = tp.add_param_block(m.drift.params().size());
  bv.diff_block = tp.add_param_block(m.diffusion.params().size());
  bv.theta3.resize(std::size_t(m.d()));
  for (int i = 0; i < m.d(); ++i)
    bv.theta3[std::size_t(i)] = TV{&tp, tp.leaf(m.theta3[i])};
  return bv;
}

std::vector<std::vector<TV>> tape_simulate(Tape& tp, const BridgeModel& m,
                                           const BridgeVars& bv,
                                           const NoiseSource& noise, int n_paths) {
  require(n_paths >= 1, "tape_simulate: n_paths must be >= 1");
  const int d = m.d(), M = m.grid.M, B = n_paths;
  std::vector<std::vector<TV>> states(std::size_t(M + 1));
  states[0].resize(std::size_t(d) * std::size_t(B));
  for (int p = 0; p < B; ++p)
    for (int i = 0; i < d; ++i) states[0][std::size_t(i + d * p)] = bv.theta3[std::size_t(i)];

  std::vector<Var> xin(std::size_t(d + 1) * std::size_t(B));
  for (int k = 0; k < M; ++k) {
    const double t = m.grid.time(k);
    const Var tleaf = tp.leaf(t);
    for (int p = 0; p < B; ++p) {
      for (int i = 0; i < d; ++i)
        xin[std::size_t(i + (d + 1) * p)] = states[std::size_t(k)][std::size_t(i + d * p)].v;
      xin[std::size_t(d + (d + 1) * p)] = tleaf;
    }
    const std::vector<Var> bout = tape_value_call(tp, m.drift, bv.drift_block, xin, B);
    const std::vector<Var> sraw = tape_value_call(tp, m.diffusion, bv.diff_block, xin, B);
    states[std::size_t(k + 1)].resize(std::size_t(d) * std::size_t(B));
    for (int p = 0; p < B; ++p)
      for (int i = 0; i < d; ++i) {
        const TV x = states[std::size_t(k)][std::size_t(i + d * p)];
        const TV b{&tp, bout[std::size_t(i + d * p)]};
        const TV sg{&tp, tp.add_const(tp.softplus(sraw[std::size_t(i + d * p)]), kSigmaFloor)};
        const double dw =
            noise.dW(std::uint64_t(p), std::uint64_t(k), std::uint64_t(i), m.grid.h);
        const TV next = x + b * m.grid.h + sg * dw;
        if (!std::isfinite(next.val()))
          throw NumericError("bridge simulation diverged at path " + std::to_string(p) +
                             " step " + std::to_string(k + 1));
        states[std::size_t(k + 1)][std::size_t(i + d * p)] = next;
      }
  }
  return states;
}

TV tape_terminal_loss(Tape& tp, const BridgeModel& m, const BridgeVars& bv,
                      const SampleCloud& data, const NoiseSource& noise,
                      BridgeLossKind kind, const SinkhornConfig& sk) {
  require(data.n() >= 1, "terminal_loss: empty data cloud");
  require(data.d() == m.d(), "terminal_loss: data dimension mismatch");
  const auto states = tape_simulate(tp, m, bv, noise, data.n());
  const std::vector<TV> leaves = cloud_leaves(tp, data);
  return cloud_distance(tp, states.back(), leaves, data.n(), m.d(), kind, sk);
}

TV tape_chain_loss(Tape& tp, const BridgeModel& m, const BridgeVars& bv,
                   const ChainMarginals& targets, const NoiseSource& noise,
                   BridgeLossKind kind, const SinkhornConfig& sk) {
  require(!targets.clouds.empty(), "chain_loss: no target marginals");
  require(targets.times.size() == targets.clouds.size(),
          "chain_loss: times/clouds length mismatch");
  const int n = targets.clouds.front().n(), d = m.d();
  std::vector<int> steps;
  for (std::size_t i = 0; i < targets.times.size(); ++i) {
    const SampleCloud& c = targets.clouds[i];
    require(c.n() == n && c.d() == d, "chain_loss: target clouds must share n and d");
    if (i > 0)
      require(targets.times[i] > targets.times[i - 1],
              "chain_loss: target times must be strictly increasing");
    const int k = grid_step(m.grid, targets.times[i]);
    require(k >= 1, "chain_loss: target time " + std::to_string(targets.times[i]) +
                        " is not on the bridge grid");
    steps.push_back(k);
  }
  const auto states = tape_simulate(tp, m, bv, noise, n);
  TV total{&tp, kNoVar};
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const std::vector<TV> leaves = cloud_leaves(tp, targets.clouds[i]);
    const TV w =
        cloud_distance(tp, states[std::size_t(steps[i])], leaves, n, d, kind, sk);
    total = (i == 0) ? w : total + w;
  }
  return total;
}

TV tape_transition_loss(Tape& tp, const BridgeModel& m, const BridgeVars& bv,
                        const GaussianKernel& kernel, const SampleCloud& anchors,
                        const Vec& x0) {
  require(kernel.is_gaussian,
          "transition matching supports Gaussian target kernels only");
  require(anchors.n() >= 1, "transition_loss: empty anchor cloud");
  require(anchors.d() == m.d(), "transition_loss: anchor dimension mismatch");
  require(int(x0.size()) == m.d(), "transition_loss: x0 dimension mismatch");
  const int d = m.d(), A = anchors.n();
  const double h = kernel.step_h > 0 ? kernel.step_h : m.grid.h;
  const double half_inv_sqrt_pi = 0.5 / std::sqrt(std::numbers::pi);

  // anchors carry no times, so the kernel mismatch is averaged over a small
  // subset of grid times (the coefficients barely move across them anyway)
  std::vector<int> ks;
  const int stride = std::max(1, (m.grid.M + 7) / 8);
  for (int k = 0; k < m.grid.M; k += stride) ks.push_back(k);

  TV total{&tp, kNoVar};
  bool first = true;
  for (const int k : ks) {
    const double t = m.grid.time(k);
    Mat X(d + 1, A);
    for (int a = 0; a < A; ++a) {
      X.col(a).head(d) = anchors.points.row(a).transpose();
      X(d, a) = t;
    }
    const std::vector<Var> bout = tape_value_call(tp, m.drift, bv.drift_block, X);
    const std::vector<Var> sraw = tape_value_call(tp, m.diffusion, bv.diff_block, X);
    for (int a = 0; a < A; ++a) {
      const Vec xa = anchors.points.row(a).transpose();
      const Vec m1 = kernel.mean(xa, t);
      const Vec v1 = kernel.var_diag(xa, t);
      require(int(m1.size()) == d && int(v1.size()) == d,
              "transition_loss: kernel output dimension mismatch");
      require((v1.array() > 0).all(), "transition_loss: kernel variance must be positive");
      double self1 = 1.0;  // prod_i 1/(2 sqrt(pi v1_i)), constant in theta
      for (int i = 0; i < d; ++i) self1 *= half_inv_sqrt_pi / std::sqrt(v1[i]);
      TV self2{&tp, kNoVar}, cross{&tp, kNoVar};
      for (int i = 0; i < d; ++i) {
        const TV b{&tp, bout[std::size_t(i + d * a)]};
        const TV sg{&tp, tp.add_const(tp.softplus(sraw[std::size_t(i + d * a)]), kSigmaFloor)};
        const TV m2 = b * h + xa[i];
        const TV v2 = tsq(sg) * h;
        const TV s2_term = half_inv_sqrt_pi / tsqrt(v2);
        const TV s = v2 + v1[i];  // v1 + v2
        const TV delta2 = tsq(m2 - m1[i]);
        const TV c_term = texp(-delta2 / (s * 2.0)) / tsqrt(s * (2.0 * std::numbers::pi));
        self2 = (i == 0) ? s2_term : self2 * s2_term;
        cross = (i == 0) ? c_term : cross * c_term;
      }
      const TV l2 = self2 + self1 + cross * (-2.0);
      total = first ? l2 : total + l2;
      first = false;
    }
  }
  total = total * (1.0 / double(A * int(ks.size())));
  // initial-point penalty (X_0 - X_{0,theta3})^2
  TV pen{&tp, kNoVar};
  for (int i = 0; i < d; ++i) {
    const TV p = tsq(bv.theta3[std::size_t(i)] - x0[i]);
    pen = (i == 0) ? p : pen + p;
  }
  return total + pen;
}

double gaussian_l2_sq(const Vec& m1, const Vec& v1, const Vec& m2, const Vec& v2) {
  require(m1.size() == v1.size() && m2.size() == v2.size() && m1.size() == m2.size(),
          "gaussian_l2_sq: shape mismatch");
  const double c = 0.5 / std::sqrt(std::numbers::pi);
  double self1 = 1.0, self2 = 1.0, cross = 1.0;
  for (Eigen::Index i = 0; i < m1.size(); ++i) {
    self1 *= c / std::sqrt(v1[i]);
    self2 *= c / std::sqrt(v2[i]);
    const double s = v1[i] + v2[i];
    const double delta = m1[i] - m2[i];
    cross *= std::exp(-delta * delta / (2.0 * s)) / std::sqrt(2.0 * std::numbers::pi * s);
  }
  return self1 + self2 - 2.0 * cross;
}

namespace {

TV build_loss(Tape& tp, const BridgeModel& model, const BridgeVars& bv,
              const BridgeObjective& obj, const BridgeFitConfig& cfg,
              const NoiseSource& noise) {
  switch (obj.kind) {
    case BridgeObjective::Kind::terminal:
      return tape_terminal_loss(tp, model, bv, obj.data, noise, cfg.loss, cfg.sinkhorn);
    case BridgeObjective::Kind::chain:
      return tape_chain_loss(tp, model, bv, obj.targets, noise, cfg.loss, cfg.sinkhorn);
    case BridgeObjective::Kind::transition:
      return tape_transition_loss(tp, model, bv, obj.kernel, obj.anchors, obj.x0);
  }
  throw ConfigError("unknown bridge objective");
}

}  // namespace

double terminal_loss(const BridgeModel& m, const SampleCloud& data,
                     const NoiseSource& noise) {
  Tape tp;
  BridgeVars bv = make_bridge_vars(tp, m);
  return tape_terminal_loss(tp, m, bv, data, noise, BridgeLossKind::w2_marginal, {}).val();
}

double chain_loss(const BridgeModel& m, const ChainMarginals& targets,
                  const NoiseSource& noise) {
  Tape tp;
  BridgeVars bv = make_bridge_vars(tp, m);
  return tape_chain_loss(tp, m, bv, targets, noise, BridgeLossKind::w2_marginal, {}).val();
}

double transition_density_loss(const BridgeModel& m, const GaussianKernel& kernel,
                               const SampleCloud& anchors, const Vec& x0) {
  Tape tp;
  BridgeVars bv = make_bridge_vars(tp, m);
  return tape_transition_loss(tp, m, bv, kernel, anchors, x0).val();
}

std::pair<BridgeModel, FitReport> fit(BridgeModel model, const BridgeObjective& obj,
                                      const BridgeFitConfig& cfg) {
  require(cfg.epochs >= 0, "fit: epochs must be >= 0");
  require(cfg.lr > 0, "fit: learning rate must be positive");
  const NoiseSource noise(cfg.noise_seed);
  OptimizerState s_drift = OptimizerState::make(model.drift.params().size(), cfg.lr);
  OptimizerState s_diff = OptimizerState::make(model.diffusion.params().size(), cfg.lr);
  OptimizerState s_init = OptimizerState::make(model.theta3.size(), cfg.lr);
  FitReport rep;
  rep.seed = cfg.noise_seed;

  for (int e = 0; e < cfg.epochs; ++e) {
    Tape tp;
    BridgeVars bv = make_bridge_vars(tp, model);
    const TV loss = build_loss(tp, model, bv, obj, cfg, noise);
    const double v = loss.val();
    if (!std::isfinite(v))
      throw NumericError("bridge loss became non-finite at epoch " + std::to_string(e) +
                         " (last finite loss " +
                         (rep.trace.empty() ? std::string("none")
                                            : std::to_string(rep.trace.back())) +
                         ")");
    if (v < cfg.epsilon) {
      rep.final_loss = v;
      rep.epochs_run = e;
      rep.stop_reason = "threshold";
      return {std::move(model), std::move(rep)};
    }
    tp.backward(loss.v);
    Vec g3(model.theta3.size());
    for (int i = 0; i < model.d(); ++i) g3[i] = tp.adj(bv.theta3[std::size_t(i)].v);
    adam_step(s_drift, model.drift.params(), tp.param_grad(bv.drift_block));
    adam_step(s_diff, model.diffusion.params(), tp.param_grad(bv.diff_block));
    adam_step(s_init, model.theta3, g3);
    rep.trace.push_back(v);
  }
  rep.epochs_run = int(rep.trace.size());
  rep.stop_reason = "budget";
  {
    Tape tp;
    BridgeVars bv = make_bridge_vars(tp, model);
    rep.final_loss = build_loss(tp, model, bv, obj, cfg, noise).val();
  }
  return {std::move(model), std::move(rep)};
}

SampleCloud resample(const BridgeModel& m, int n, std::uint64_t seed) {
  const PathBatch batch = bridge_paths(m, n, seed);
  SampleCloud cloud;
  cloud.points.resize(n, m.d());
  for (int p = 0; p < n; ++p)
    for (int i = 0; i < m.d(); ++i) cloud.points(p, i) = batch.state(p, m.grid.M, i);
  return cloud;
}

PathBatch bridge_paths(const BridgeModel& m, int n_paths, std::uint64_t seed) {
  return simulate(m.coefficients(), m.theta3, m.grid, NoiseSource(seed), n_paths);
}

BudgetAdvice budget_advisor(double L, double C, double eps, int M0) {
  require(L >= 0, "budget_advisor: L must be >= 0");
  require(C > 0 && eps > 0, "budget_advisor: C and eps must be positive");
  require(M0 >= 1, "budget_advisor: M0 must be >= 1");
  const double slack = 1.0 + 1e-12;  // absorbs roundoff on the grid endpoints
  auto bound = [&](double h, int m) {
    return C * std::sqrt(h) * std::exp(4.0 * L * L * double(m) * h);
  };
  for (int k = 0; k >= -48; --k) {
    const double h = std::pow(10.0, double(k) / 8.0);
    if (C * std::sqrt(h) > eps * slack) continue;
    int m;
    if (L == 0.0) {
      m = M0;
    } else {
      const double tmax = std::log(eps * slack / (C * std::sqrt(h))) / (4.0 * L * L);
      m = int(std::min(double(M0), std::floor(tmax / h + 1e-12)));
    }
    while (m >= 1 && bound(h, m) > eps * slack) --m;
    if (m >= 1) return {true, h, double(m) * h, m};
  }
  return {};
}

void save_bridge(const std::string& path, const BridgeModel& m) {
  std::ofstream os(path);
  require(os.good(), "cannot open bridge checkpoint for writing: " + path);
  write_ckpt_header(os);
  Vec grid(3);
  grid << m.grid.t0, m.grid.h, double(m.grid.M);
  write_vec_section(os, "grid", grid);
  write_vec_section(os, "theta3", m.theta3);
  write_mlp_section(os, "drift", m.drift);
  write_mlp_section(os, "diffusion", m.diffusion);
}

BridgeModel load_bridge(const std::string& path) {
  std::ifstream is(path);
  require(is.good(), "cannot open bridge checkpoint: " + path);
  expect_ckpt_header(is, path);
  const Vec grid = read_vec_section(is, "grid", path);
  require(grid.size() == 3, "bridge checkpoint: malformed grid section in " + path);
  BridgeModel m;
  m.grid = TimeGrid{grid[0], grid[1], int(grid[2])};
  m.theta3 = read_vec_section(is, "theta3", path);
  m.drift = read_mlp_section(is, "drift", path);
  m.diffusion = read_mlp_section(is, "diffusion", path);
  const int d = m.d();
  require(m.drift.spec().input_dim == d + 1 && m.drift.spec().output_dim == d,
          "bridge checkpoint: drift net shape mismatch in " + path);
  require(m.diffusion.spec().input_dim == d + 1 && m.diffusion.spec().output_dim == d,
          "bridge checkpoint: diffusion net shape mismatch in " + path);
  return m;
}

}  // namespace fkee

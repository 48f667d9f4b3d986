#ifndef FKEE_BRIDGE_HPP
#define FKEE_BRIDGE_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fkee/mlp.hpp"
#include "fkee/otmetrics.hpp"
#include "fkee/sde.hpp"

namespace fkee {

// lower bound of the diagonal diffusion after the softplus positivity map
inline constexpr double kSigmaFloor = 1e-4;

// Neural SDE dX = b_t1(X,t) dt + s_t2(X,t) dW from learnable start theta3.
// Both nets take [x; t] (t last) and emit d outputs; the diffusion output
// passes through softplus and is floored at kSigmaFloor.
struct BridgeModel {
  MLP drift;
  MLP diffusion;
  Vec theta3;
  TimeGrid grid;

  int d() const { return int(theta3.size()); }

  Vec drift_at(const Vec& x, double t) const;
  Vec sigma_at(const Vec& x, double t) const;
  SDECoefficients coefficients() const;

  static BridgeModel make(int d, const TimeGrid& grid,
                          const std::vector<int>& hidden, std::uint64_t seed);
};

// marginal targets at times that must lie on the bridge grid
struct ChainMarginals {
  std::vector<double> times;
  std::vector<SampleCloud> clouds;
};

// Gaussian one-step kernel y | x ~ N(mean(x,t), diag(var(x,t))); the flag
// exists so non-Gaussian kernels can be rejected explicitly.
struct GaussianKernel {
  std::function<Vec(const Vec&, double)> mean;
  std::function<Vec(const Vec&, double)> var_diag;
  double step_h = 0.0;
  bool is_gaussian = true;
};

enum class BridgeLossKind { w2_marginal, sinkhorn };

struct BridgeFitConfig {
  int epochs = 300;
  double lr = 1e-3;
  double epsilon = 0.0;  // early-stop threshold on the loss
  std::uint64_t noise_seed = 0;
  BridgeLossKind loss = BridgeLossKind::w2_marginal;
  SinkhornConfig sinkhorn;
};

struct BridgeObjective {
  enum class Kind { terminal, chain, transition } kind = Kind::terminal;
  SampleCloud data;        // terminal
  ChainMarginals targets;  // chain
  GaussianKernel kernel;   // transition
  SampleCloud anchors;
  Vec x0;

  static BridgeObjective terminal(SampleCloud cloud);
  static BridgeObjective chain(ChainMarginals marg);
  static BridgeObjective transition(GaussianKernel k, SampleCloud anchors, Vec x0);
};

// ---- tape builders (fit uses these; tests probe gradients through them) --
struct BridgeVars {
  int drift_block = -1;
  int diff_block = -1;
  std::vector<TV> theta3;
};

BridgeVars make_bridge_vars(Tape& tp, const BridgeModel& m);

// unrolled Euler-Maruyama under replayed counter noise; result[k][i + d*p]
// holds component i of path p at grid step k (k = 0..M)
std::vector<std::vector<TV>> tape_simulate(Tape& tp, const BridgeModel& m,
                                           const BridgeVars& bv,
                                           const NoiseSource& noise, int n_paths);

TV tape_terminal_loss(Tape& tp, const BridgeModel& m, const BridgeVars& bv,
                      const SampleCloud& data, const NoiseSource& noise,
                      BridgeLossKind kind, const SinkhornConfig& sk);
TV tape_chain_loss(Tape& tp, const BridgeModel& m, const BridgeVars& bv,
                   const ChainMarginals& targets, const NoiseSource& noise,
                   BridgeLossKind kind, const SinkhornConfig& sk);
TV tape_transition_loss(Tape& tp, const BridgeModel& m, const BridgeVars& bv,
                        const GaussianKernel& kernel, const SampleCloud& anchors,
                        const Vec& x0);

// ---- scalar losses ------------------------------------------------------
double terminal_loss(const BridgeModel& m, const SampleCloud& data,
                     const NoiseSource& noise);
double chain_loss(const BridgeModel& m, const ChainMarginals& targets,
                  const NoiseSource& noise);
double transition_density_loss(const BridgeModel& m, const GaussianKernel& kernel,
                               const SampleCloud& anchors, const Vec& x0);

// squared L2 distance between diagonal Gaussians N(m1, diag(v1)), N(m2, diag(v2))
double gaussian_l2_sq(const Vec& m1, const Vec& v1, const Vec& m2, const Vec& v2);

// Adam training per Algorithm-style epoch loop with replayed noise; stops
// early once the loss drops below cfg.epsilon (checked before each update)
std::pair<BridgeModel, FitReport> fit(BridgeModel model, const BridgeObjective& obj,
                                      const BridgeFitConfig& cfg);

// terminal states of n fresh numeric simulations under a fresh noise stream
SampleCloud resample(const BridgeModel& m, int n, std::uint64_t seed);

// numeric paths with recorded bridge coefficients, ready for PDE collocation
PathBatch bridge_paths(const BridgeModel& m, int n_paths, std::uint64_t seed);

// Euler budget advisor for bound C sqrt(h) exp(4 L^2 T) <= eps with T = m h,
// m <= M0; h walks a descending log grid, largest feasible h wins and T is
// the largest feasible horizon at that h
struct BudgetAdvice {
  bool feasible = false;
  double h = 0.0;
  double T = 0.0;
  int steps = 0;
};
BudgetAdvice budget_advisor(double L, double C, double eps, int M0);

void save_bridge(const std::string& path, const BridgeModel& m);
BridgeModel load_bridge(const std::string& path);

}  // namespace fkee

#endif

#ifndef FKEE_FKPDE_HPP
#define FKEE_FKPDE_HPP

#include <cstdint>
#include <functional>
#include <utility>

#include "fkee/mlp.hpp"
#include "fkee/sde.hpp"

namespace fkee {

// terminal condition samples: u(x_T, T) should match f(x_T)
struct BoundarySet {
  Mat x;  // n x d
  Vec f;  // n
  double T = 0.0;
  int n() const { return int(x.rows()); }
  int d() const { return int(x.cols()); }
};

struct LossWeights {
  double lambda1 = 1.0;
  double lambda2 = 1.0;
};

struct SolveConfig {
  int epochs = 1000;
  double lr = 1e-3;
  double epsilon = 0.0;  // early-stop threshold on the weighted loss
};

// backward-equation residual dt_u + sum_i dx_i(u) b_i + 0.5 * second-order
// term, straight from jet coefficients. sig_info holds the diagonal entries
// (diagonal mode) or the flattened d x d sigma matrix (full mode).
double pde_residual(const Jet& jet, const Vec& b, const Vec& sig_info, bool diagonal);
double pde_residual(const MLP& u, const CollocPoint& pt, bool diagonal);

// mean squared terminal mismatch; f values are constants w.r.t. parameters
double boundary_loss(const MLP& u, const BoundarySet& boundary);

// mean squared residual over the interior collocation points
double residual_loss(const MLP& u, const CollocationSet& colloc);

// minimize lambda1 * mean(residual^2) + lambda2 * boundary_loss with Adam
std::pair<MLP, FitReport> solve(MLP u, const CollocationSet& colloc,
                                const BoundarySet& boundary, const LossWeights& w,
                                const SolveConfig& cfg);

// u(x0, t0), the Feynman-Kac readout of E[f(X_T) | X_0 = x0]
double estimate_expectation(const MLP& u, const Vec& x0, double t0);

// evaluate f on the terminal collocation points
BoundarySet boundary_from_collocation(const CollocationSet& colloc,
                                      const std::function<double(const Vec&)>& f);

// two tanh hidden layers; width 108 up to d = 10, 526 above
MLPSpec default_solution_spec(int d);

}  // namespace fkee

#endif

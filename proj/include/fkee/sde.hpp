#ifndef FKEE_SDE_HPP
#define FKEE_SDE_HPP

#include <functional>
#include <string>

#include "fkee/common.hpp"
#include "fkee/rng.hpp"

namespace fkee {

struct TimeGrid {
  double t0 = 0.0;
  double h = 0.0;
  int M = 0;
  double T() const { return t0 + h * M; }
  double time(int k) const { return t0 + h * k; }
};

// dX = b(X,t) dt + sigma(X,t) dW, sigma diagonal (as a d-vector) or full
struct SDECoefficients {
  std::function<Vec(const Vec&, double)> drift;
  std::function<Vec(const Vec&, double)> diff_diag;
  std::function<Mat(const Vec&, double)> diff_full;
  bool diagonal = true;
};

struct PathBatch {
  TimeGrid grid;
  int n_paths = 0;
  int d = 0;
  bool diagonal = true;
  // row-major (path, step, component); diffs hold d (diagonal) or d*d entries
  std::vector<double> states, drifts, diffs;

  int sig_len() const { return diagonal ? d : d * d; }
  double state(int p, int k, int i) const {
    return states[std::size_t((p * (grid.M + 1) + k) * d + i)];
  }
  Vec state_vec(int p, int k) const {
    Vec v(d);
    for (int i = 0; i < d; ++i) v[i] = state(p, k, i);
    return v;
  }
  Vec drift_vec(int p, int k) const {
    Vec v(d);
    for (int i = 0; i < d; ++i)
      v[i] = drifts[std::size_t((p * (grid.M + 1) + k) * d + i)];
    return v;
  }
  Vec diff_vec(int p, int k) const {  // diagonal entries or flattened matrix
    Vec v(sig_len());
    for (int i = 0; i < sig_len(); ++i)
      v[i] = diffs[std::size_t((p * (grid.M + 1) + k) * sig_len() + i)];
    return v;
  }
};

PathBatch simulate(const SDECoefficients& coeffs, const Vec& x0, const TimeGrid& grid,
                   const NoiseSource& noise, int n_paths);

// b(x) = 0.5 * grad log p(x); the Langevin construction uses sigma = identity
std::function<Vec(const Vec&, double)> langevin_drift(
    std::function<Vec(const Vec&)> grad_log_density);

SDECoefficients langevin_sde(std::function<Vec(const Vec&)> grad_log_density);
SDECoefficients gbm_sde(double mu, double sigma);
// the Jacobi-type test SDE; hconst is the constant written into its
// coefficients (defaults to the integration step at the call site), and the
// state is clamped to [delta, 1-delta] before evaluating the singular terms
SDECoefficients jacobi_sde(double hconst, double delta = 1e-6);

// interior/terminal split of path points for PDE collocation
struct CollocPoint {
  Vec x;
  double t = 0.0;
  Vec b;
  Vec sig;  // diagonal entries or flattened d*d
  int path = 0, step = 0;
};

struct CollocationSet {
  int d = 0;
  bool diagonal = true;
  double T = 0.0;
  std::vector<CollocPoint> interior;  // t < T
  std::vector<CollocPoint> terminal;  // t == T
};

CollocationSet subsample_collocation(const PathBatch& batch, int stride);

void write_pathbatch_csv(const PathBatch& batch, const std::string& path);
PathBatch read_pathbatch_csv(const std::string& path);

}  // namespace fkee

#endif

#ifndef FKEE_GIBBS_HPP
#define FKEE_GIBBS_HPP

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fkee/common.hpp"

namespace fkee {

// n x n 2-d lattice, vertices row-major. The open variant has the 4-neighbor
// edge set with |E| = 2n(n-1); the periodic variant wraps both directions.
struct LatticeSpec {
  int n = 0;
  std::vector<std::pair<int, int>> edges;

  int sites() const { return n * n; }
  static LatticeSpec open(int n);
  static LatticeSpec periodic(int n);
};

using SpinState = std::vector<int>;  // entries exactly +1 / -1

struct GibbsChain {
  double beta = 0.0;
  std::vector<SpinState> states;  // one snapshot per sweep
  std::uint64_t seed = 0;
};

// H(s) = -(number of agreeing adjacent pairs), in [-|E|, 0]
int hamiltonian(const LatticeSpec& lat, const SpinState& s);

// systematic-scan single-site heat-bath sampler at inverse temperature beta
GibbsChain run_chain(const LatticeSpec& lat, double beta, int sweeps,
                     std::uint64_t seed);

// (1/N) sum f(x_i) over terminal samples of independent chains
double lln_estimate(const std::function<double(const SpinState&)>& f,
                    const std::vector<SpinState>& terminal_samples);
double lln_estimate(const std::vector<double>& values);

// time average of path[M..end] after discarding the burn-in prefix
double etmc_estimate(const std::vector<double>& path, int burn_in);

// exact Z(beta) by enumeration; guarded to n <= 4
double exact_partition(const LatticeSpec& lat, double beta);

// state counts per Hamiltonian value (n <= 4)
std::map<int, long long> h_histogram(const LatticeSpec& lat);

// enumeration ground truth for the partition-ratio experiment:
// wi = E_{pi_b1} exp(-d H), vi = E_{pi_b2} exp(+d H), d = (b2-b1)/2,
// q = vi/wi = Z(b1)/Z(b2)
struct GpfTruth {
  double wi = 0.0, vi = 0.0, q = 0.0;
};
GpfTruth enumeration_truth(const LatticeSpec& lat, double beta1, double beta2);

// boundary f for the spin-vector method: x -> sigmoid -> round (ties to 1)
// -> {0,1} -> {-1,+1} -> H -> exp(-(b2-b1)/2 * H)
std::function<double(const Vec&)> spin_boundary_f(double beta1, double beta2,
                                                  LatticeSpec lat);

// observable exp(-delta * H) used on chain snapshots
double gpf_observable(const LatticeSpec& lat, const SpinState& s, double delta);

// columns: sweep, H, observable (= exp(-delta * H))
void write_chain_csv(const GibbsChain& chain, const LatticeSpec& lat,
                     double delta, const std::string& path);

}  // namespace fkee

#endif

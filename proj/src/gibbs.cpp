#include "fkee/gibbs.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "fkee/rng.hpp"

namespace fkee {

LatticeSpec LatticeSpec::open(int n) {
  require(n >= 1, "lattice side must be >= 1");
  LatticeSpec lat;
  lat.n = n;
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      const int v = r * n + c;
      if (c + 1 < n) lat.edges.emplace_back(v, v + 1);
      if (r + 1 < n) lat.edges.emplace_back(v, v + n);
    }
  return lat;
}

LatticeSpec LatticeSpec::periodic(int n) {
  require(n >= 2, "periodic lattice side must be >= 2");
  LatticeSpec lat;
  lat.n = n;
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      const int v = r * n + c;
      lat.edges.emplace_back(v, r * n + (c + 1) % n);
      lat.edges.emplace_back(v, ((r + 1) % n) * n + c);
    }
  return lat;
}

int hamiltonian(const LatticeSpec& lat, const SpinState& s) {
  require(int(s.size()) == lat.sites(), "spin state size mismatch");
  int agree = 0;
  for (const auto& [i, j] : lat.edges) agree += (s[std::size_t(i)] == s[std::size_t(j)]);
  return -agree;
}

GibbsChain run_chain(const LatticeSpec& lat, double beta, int sweeps,
                     std::uint64_t seed) {
  require(sweeps >= 1, "chain needs at least one sweep");
  const int ns = lat.sites();
  // per-site adjacency (with multiplicity, so the periodic n=2 case stays correct)
  std::vector<std::vector<int>> nbr(static_cast<std::size_t>(ns));
  for (const auto& [i, j] : lat.edges) {
    nbr[std::size_t(i)].push_back(j);
    nbr[std::size_t(j)].push_back(i);
  }
  Rng rng(seed);
  SpinState s(static_cast<std::size_t>(ns));
  for (int k = 0; k < ns; ++k) s[std::size_t(k)] = rng.uniform() <= 0.5 ? 1 : -1;

  GibbsChain chain;
  chain.beta = beta;
  chain.seed = seed;
  chain.states.reserve(std::size_t(sweeps));
  for (int sweep = 0; sweep < sweeps; ++sweep) {
    for (int k = 0; k < ns; ++k) {
      int delta = 0;  // (# neighbors at +1) - (# neighbors at -1)
      for (int j : nbr[std::size_t(k)]) delta += s[std::size_t(j)];
      const double p_up = 1.0 / (1.0 + std::exp(-beta * double(delta)));
      s[std::size_t(k)] = rng.uniform() <= p_up ? 1 : -1;
    }
    chain.states.push_back(s);
  }
  return chain;
}

double lln_estimate(const std::function<double(const SpinState&)>& f,
                    const std::vector<SpinState>& terminal_samples) {
  require(!terminal_samples.empty(), "lln_estimate: no samples");
  double acc = 0.0;
  for (const SpinState& s : terminal_samples) acc += f(s);
  return acc / double(terminal_samples.size());
}

double lln_estimate(const std::vector<double>& values) {
  require(!values.empty(), "lln_estimate: no samples");
  double acc = 0.0;
  for (double v : values) acc += v;
  return acc / double(values.size());
}

double etmc_estimate(const std::vector<double>& path, int burn_in) {
  require(burn_in >= 0, "etmc_estimate: negative burn-in");
  require(burn_in < int(path.size()), "etmc_estimate: burn-in swallows the whole path");
  double acc = 0.0;
  for (std::size_t t = std::size_t(burn_in); t < path.size(); ++t) acc += path[t];
  return acc / double(path.size() - std::size_t(burn_in));
}

namespace {

void require_enumerable(const LatticeSpec& lat) {
  require(lat.n <= 4, "exact enumeration is guarded to n <= 4");
}

// visit every spin configuration; spin k is bit k of the mask
template <class F>
void enumerate_states(const LatticeSpec& lat, F&& visit) {
  const int ns = lat.sites();
  SpinState s(static_cast<std::size_t>(ns));
  const std::uint32_t total = std::uint32_t(1) << ns;
  for (std::uint32_t mask = 0; mask < total; ++mask) {
    for (int k = 0; k < ns; ++k)
      s[std::size_t(k)] = (mask >> k) & 1u ? 1 : -1;
    visit(s);
  }
}

}  // namespace

double exact_partition(const LatticeSpec& lat, double beta) {
  require_enumerable(lat);
  double z = 0.0;
  enumerate_states(lat, [&](const SpinState& s) { z += std::exp(-beta * hamiltonian(lat, s)); });
  return z;
}

std::map<int, long long> h_histogram(const LatticeSpec& lat) {
  require_enumerable(lat);
  std::map<int, long long> hist;
  enumerate_states(lat, [&](const SpinState& s) { ++hist[hamiltonian(lat, s)]; });
  return hist;
}

GpfTruth enumeration_truth(const LatticeSpec& lat, double beta1, double beta2) {
  require_enumerable(lat);
  // E_{pi_b} exp(c H) = Z(b - c) / Z(b) since exp(-bH + cH) = exp(-(b-c)H);
  // with c = (b2-b1)/2 both expectations land on the midpoint temperature

  const double z1 = exact_partition(lat, beta1);
  const double z2 = exact_partition(lat, beta2);
  const double zmid = exact_partition(lat, 0.5 * (beta1 + beta2));
  GpfTruth t;
  t.wi = zmid / z1;
  t.vi = zmid / z2;
  t.q = z1 / z2;
  return t;
}

std::function<double(const Vec&)> spin_boundary_f(double beta1, double beta2,
                                                  LatticeSpec lat) {
  const double delta = 0.5 * (beta2 - beta1);
  return [lat = std::move(lat), delta](const Vec& x) {
    require(int(x.size()) == lat.sites(), "spin boundary f: dimension mismatch");
    SpinState s(static_cast<std::size_t>(lat.sites()));
    for (int k = 0; k < lat.sites(); ++k) {
      const double sig = 1.0 / (1.0 + std::exp(-x[k]));
      const int bit = int(std::floor(sig + 0.5));  // ties round up to 1
      s[std::size_t(k)] = bit == 1 ? 1 : -1;
    }
    return std::exp(-delta * hamiltonian(lat, s));
  };
}

double gpf_observable(const LatticeSpec& lat, const SpinState& s, double delta) {
  return std::exp(-delta * hamiltonian(lat, s));
}

void write_chain_csv(const GibbsChain& chain, const LatticeSpec& lat,
                     double delta, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), "cannot open chain csv for writing: " + path);
  out << "sweep,H,observable\n";
  char buf[64];
  for (std::size_t t = 0; t < chain.states.size(); ++t) {
    const int h = hamiltonian(lat, chain.states[t]);
    std::snprintf(buf, sizeof buf, "%.17g", std::exp(-delta * double(h)));
    out << t << ',' << h << ',' << buf << '\n';
  }
}

}  // namespace fkee

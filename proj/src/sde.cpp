#include "fkee/sde.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "fkee/checkpoint.hpp"

namespace fkee {

PathBatch simulate(const SDECoefficients& coeffs, const Vec& x0, const TimeGrid& grid,
                   const NoiseSource& noise, int n_paths) {
  require(n_paths >= 1, "simulate: n_paths must be >= 1");
  require(grid.h > 0 && grid.M >= 1, "simulate: bad time grid");
  const int d = int(x0.size());
  PathBatch out;
  out.grid = grid;
  out.n_paths = n_paths;
  out.d = d;
  out.diagonal = coeffs.diagonal;
  const int sl = out.sig_len();
  out.states.resize(std::size_t(n_paths) * (grid.M + 1) * d);
  out.drifts.resize(std::size_t(n_paths) * (grid.M + 1) * d);
  out.diffs.resize(std::size_t(n_paths) * (grid.M + 1) * sl);

  for (int p = 0; p < n_paths; ++p) {
    Vec x = x0;
    for (int k = 0; k <= grid.M; ++k) {
      const double t = grid.time(k);
      if (!x.allFinite())
        throw NumericError("simulation diverged at path " + std::to_string(p) +
                           " step " + std::to_string(k));
      const Vec b = coeffs.drift(x, t);
      Vec sig(sl);
      Mat sigm;
      if (coeffs.diagonal) {
        sig = coeffs.diff_diag(x, t);
      } else {
        sigm = coeffs.diff_full(x, t);
        sig = Eigen::Map<const Vec>(sigm.data(), sigm.size());
      }
      const std::size_t base = std::size_t(p * (grid.M + 1) + k);
      for (int i = 0; i < d; ++i) {
        out.states[base * std::size_t(d) + std::size_t(i)] = x[i];
        out.drifts[base * std::size_t(d) + std::size_t(i)] = b[i];
      }
      for (int i = 0; i < sl; ++i)
        out.diffs[base * std::size_t(sl) + std::size_t(i)] = sig[i];

      if (k == grid.M) break;
      if (coeffs.diagonal) {
        for (int i = 0; i < d; ++i)
          x[i] += b[i] * grid.h + sig[i] * noise.dW(std::uint64_t(p),
                                                    std::uint64_t(k),
                                                    std::uint64_t(i), grid.h);
      } else {
        Vec dw(d);
        for (int i = 0; i < d; ++i)
          dw[i] = noise.dW(std::uint64_t(p), std::uint64_t(k), std::uint64_t(i),
                           grid.h);
        x += b * grid.h + sigm * dw;
      }
    }
  }
  return out;
}

std::function<Vec(const Vec&, double)> langevin_drift(
    std::function<Vec(const Vec&)> grad_log_density) {
  return [g = std::move(grad_log_density)](const Vec& x, double) -> Vec {
    return 0.5 * g(x);
  };
}

SDECoefficients langevin_sde(std::function<Vec(const Vec&)> grad_log_density) {
  SDECoefficients c;
  c.drift = langevin_drift(std::move(grad_log_density));
  c.diff_diag = [](const Vec& x, double) { return Vec::Ones(x.size()); };
  c.diagonal = true;
  return c;
}

SDECoefficients gbm_sde(double mu, double sigma) {
  SDECoefficients c;
  c.drift = [mu](const Vec& x, double) -> Vec { return mu * x; };
  c.diff_diag = [sigma](const Vec& x, double) -> Vec { return sigma * x; };
  c.diagonal = true;
  return c;
}

SDECoefficients jacobi_sde(double hconst, double delta) {
  SDECoefficients c;
  auto clamp = [delta](double v) { return std::min(std::max(v, delta), 1.0 - delta); };
  c.drift = [hconst, clamp](const Vec& x, double) -> Vec {
    Vec b(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double u = clamp(x[i]);
      b[i] = 0.5 * hconst * hconst * (1.0 - 2.0 * u) / std::sqrt(u * (1.0 - u));
    }
    return b;
  };
  c.diff_diag = [hconst, clamp](const Vec& x, double) -> Vec {
    Vec s(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double u = clamp(x[i]);
      s[i] = 2.0 * hconst * std::pow(u * (1.0 - u), 0.25);
    }
    return s;
  };
  c.diagonal = true;
  return c;
}

CollocationSet subsample_collocation(const PathBatch& batch, int stride) {
  require(stride >= 1, "subsample_collocation: stride must be >= 1");
  CollocationSet out;
  out.d = batch.d;
  out.diagonal = batch.diagonal;
  out.T = batch.grid.T();
  for (int p = 0; p < batch.n_paths; ++p) {
    for (int k = 0; k < batch.grid.M; k += stride) {
      CollocPoint pt;
      pt.x = batch.state_vec(p, k);
      pt.t = batch.grid.time(k);
      pt.b = batch.drift_vec(p, k);
      pt.sig = batch.diff_vec(p, k);
      pt.path = p;
      pt.step = k;
      out.interior.push_back(std::move(pt));
    }
    CollocPoint pt;
    pt.x = batch.state_vec(p, batch.grid.M);
    pt.t = batch.grid.T();
    pt.b = batch.drift_vec(p, batch.grid.M);
    pt.sig = batch.diff_vec(p, batch.grid.M);
    pt.path = p;
    pt.step = batch.grid.M;
    out.terminal.push_back(std::move(pt));
  }
  return out;
}

void write_pathbatch_csv(const PathBatch& batch, const std::string& path) {
  std::ofstream os(path);
  require(bool(os), "cannot open " + path + " for writing");
  os << "path_id,step,t";
  for (int i = 0; i < batch.d; ++i) os << ",x_" << i;
  for (int i = 0; i < batch.d; ++i) os << ",b_" << i;
  for (int i = 0; i < batch.sig_len(); ++i) os << ",sigma_" << i;
  os << "\n";
  for (int p = 0; p < batch.n_paths; ++p)
    for (int k = 0; k <= batch.grid.M; ++k) {
      os << p << "," << k << "," << format_g17(batch.grid.time(k));
      for (int i = 0; i < batch.d; ++i) os << "," << format_g17(batch.state(p, k, i));
      const Vec b = batch.drift_vec(p, k);
      for (int i = 0; i < batch.d; ++i) os << "," << format_g17(b[i]);
      const Vec s = batch.diff_vec(p, k);
      for (int i = 0; i < batch.sig_len(); ++i) os << "," << format_g17(s[i]);
      os << "\n";
    }
}

PathBatch read_pathbatch_csv(const std::string& path) {
  std::ifstream is(path);
  require(bool(is), "cannot open " + path);
  std::string header;
  require(bool(std::getline(is, header)), "empty PathBatch CSV " + path);

  int d = 0, sl = 0;
  {
    std::stringstream hs(header);
    std::string col;
    while (std::getline(hs, col, ',')) {
      if (col.rfind("x_", 0) == 0) ++d;
      if (col.rfind("sigma_", 0) == 0) ++sl;
    }
    require(d >= 1, "PathBatch CSV " + path + " has no x_ columns");
  }
  const bool diagonal = sl == d;
  require(diagonal || sl == d * d, "PathBatch CSV " + path + " has bad sigma arity");

  struct Row {
    int p, k;
    double t;
    std::vector<double> rest;
  };
  std::vector<Row> rows;
  std::string line;
  int max_p = -1, max_k = -1;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::string cell;
    Row r;
    std::getline(ls, cell, ',');
    r.p = std::stoi(cell);
    std::getline(ls, cell, ',');
    r.k = std::stoi(cell);
    std::getline(ls, cell, ',');
    r.t = std::stod(cell);
    while (std::getline(ls, cell, ',')) r.rest.push_back(std::stod(cell));
    require(int(r.rest.size()) == 2 * d + sl, "PathBatch CSV " + path + " bad row");
    max_p = std::max(max_p, r.p);
    max_k = std::max(max_k, r.k);
    rows.push_back(std::move(r));
  }
  require(max_p >= 0 && max_k >= 1, "PathBatch CSV " + path + " too small");

  PathBatch out;
  out.n_paths = max_p + 1;
  out.d = d;
  out.diagonal = diagonal;
  double t0 = 0.0, t1 = 0.0;
  for (const Row& r : rows) {
    if (r.p == 0 && r.k == 0) t0 = r.t;
    if (r.p == 0 && r.k == 1) t1 = r.t;
  }
  out.grid = TimeGrid{t0, t1 - t0, max_k};
  out.states.assign(std::size_t(out.n_paths) * (max_k + 1) * d, 0.0);
  out.drifts.assign(std::size_t(out.n_paths) * (max_k + 1) * d, 0.0);
  out.diffs.assign(std::size_t(out.n_paths) * (max_k + 1) * sl, 0.0);
  for (const Row& r : rows) {
    const std::size_t base = std::size_t(r.p * (max_k + 1) + r.k);
    for (int i = 0; i < d; ++i) {
      out.states[base * std::size_t(d) + std::size_t(i)] = r.rest[std::size_t(i)];
      out.drifts[base * std::size_t(d) + std::size_t(i)] = r.rest[std::size_t(d + i)];
    }
    for (int i = 0; i < sl; ++i)
      out.diffs[base * std::size_t(sl) + std::size_t(i)] = r.rest[std::size_t(2 * d + i)];
  }
  return out;
}

}  // namespace fkee

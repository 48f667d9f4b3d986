#include "fkee/harness.hpp"

#include <algorithm>
#include <chrono>
#include <climits>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "fkee/checkpoint.hpp"

namespace fkee {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

}  // namespace

// ---- Config ---------------------------------------------------------------

Config Config::from_file(const std::string& path) {
  std::ifstream is(path);
  require(bool(is), "cannot open config file " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return from_string(ss.str());
}

Config Config::from_string(const std::string& text) {
  Config cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    require(eq != std::string::npos,
            "config line " + std::to_string(lineno) + " is not key=value: " + line);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    require(!key.empty(), "config line " + std::to_string(lineno) + " has empty key");
    require(!value.empty(),
            "config key '" + key + "' has empty value (line " +
                std::to_string(lineno) + ")");
    require(cfg.raw_.count(key) == 0, "duplicate config key '" + key + "'");
    cfg.raw_[key] = value;
  }
  return cfg;
}

void Config::set(const std::string& key, const std::string& value) {
  raw_[key] = value;
}

std::string Config::fetch(const std::string& key, const std::string& def,
                          bool required) {
  auto it = raw_.find(key);
  if (it == raw_.end()) {
    require(!required, "missing required config key '" + key + "'");
    effective_[key] = def;
    return def;
  }
  used_[key] = true;
  effective_[key] = it->second;
  return it->second;
}

std::string Config::get_str(const std::string& key, const std::string& def) {
  return fetch(key, def, false);
}

std::string Config::req_str(const std::string& key) { return fetch(key, "", true); }

double Config::get_double(const std::string& key, double def) {
  const std::string s = fetch(key, format_g17(def), false);
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    require(pos == s.size(), "config key '" + key + "' is not a number: " + s);
    return v;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' is not a number: " + s);
  }
}

int Config::get_int(const std::string& key, int def) {
  const std::string s = fetch(key, std::to_string(def), false);
  try {
    std::size_t pos = 0;
    const long v = std::stol(s, &pos);
    require(pos == s.size() && v >= INT_MIN && v <= INT_MAX,
            "config key '" + key + "' is not an integer: " + s);
    return int(v);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' is not an integer: " + s);
  }
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t def) {
  const std::string s = fetch(key, std::to_string(def), false);
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(s, &pos);
    require(pos == s.size(), "config key '" + key + "' is not an unsigned integer: " + s);
    return v;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' is not an unsigned integer: " + s);
  }
}

bool Config::get_bool(const std::string& key, bool def) {
  const std::string s = fetch(key, def ? "true" : "false", false);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError("config key '" + key + "' is not a boolean: " + s);
}

void Config::finish() const {
  std::string unknown;
  for (const auto& kv : raw_)
    if (!used_.count(kv.first)) unknown += (unknown.empty() ? "" : ", ") + kv.first;
  require(unknown.empty(), "unknown config key(s): " + unknown);
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t Config::config_hash() const {
  std::string blob;
  for (const auto& kv : effective_) blob += kv.first + "=" + kv.second + "\n";
  return fnv1a64(blob);
}

std::string Config::hash_hex() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)config_hash());
  return buf;
}

// ---- reports ----------------------------------------------------------------

void finalize_sq_errors(std::vector<EstimateReport>& rows) {
  std::map<std::string, std::pair<double, int>> acc;
  auto key = [](const EstimateReport& r) {
    return r.experiment + '\n' + r.method + '\n' + std::to_string(r.n_or_d);
  };
  for (const auto& r : rows) {
    auto& a = acc[key(r)];
    a.first += r.estimate;
    a.second += 1;
  }
  for (auto& r : rows) {
    const auto& a = acc[key(r)];
    const double mean = a.first / a.second;
    r.sq_error = (r.estimate - mean) * (r.estimate - mean);
  }
}

std::string report_row_line(const EstimateReport& r) {
  std::string line = r.experiment + "," + r.method + "," + std::to_string(r.n_or_d) +
                     "," + format_g17(r.estimate) + ",";
  if (r.has_truth)
    line += format_g17(r.truth) + "," + format_g17(r.abs_error) + "," +
            format_g17(r.sq_error);
  else
    line += ",,";
  line += "," + std::to_string(r.points_used) + "," + format_g17(r.wall_time_s) +
          "," + std::to_string(r.seed) + "," + r.config_hash;
  return line;
}

void write_reports_csv(const std::string& path,
                       const std::vector<EstimateReport>& rows) {
  std::ofstream os(path);
  require(bool(os), "cannot open " + path + " for writing");
  os << "experiment,method,n_or_d,estimate,truth,abs_error,sq_error,"
        "points_used,wall_time_s,seed,config_hash\n";
  for (const auto& r : rows) os << report_row_line(r) << "\n";
}

std::vector<MethodSummary> compare_estimators(const std::vector<EstimateReport>& rows) {
  require(rows.size() >= 2, "compare_estimators needs at least two report rows");
  std::vector<std::string> order;
  std::map<std::string, std::vector<const EstimateReport*>> groups;
  for (const auto& r : rows) {
    if (!groups.count(r.method)) order.push_back(r.method);
    groups[r.method].push_back(&r);
  }
  std::vector<MethodSummary> out;
  for (const auto& m : order) {
    const auto& g = groups[m];
    MethodSummary s;
    s.method = m;
    s.rows = int(g.size());
    s.has_truth = std::all_of(g.begin(), g.end(),
                              [](const EstimateReport* r) { return r->has_truth; });
    double mean = 0.0;
    for (const auto* r : g) {
      if (s.has_truth) s.mean_abs += r->abs_error;
      s.mean_sq += r->sq_error;
      s.mean_points += double(r->points_used);
      mean += r->estimate;
    }
    s.mean_abs /= s.has_truth ? s.rows : 1;
    s.mean_sq /= s.rows;
    s.mean_points /= s.rows;
    mean /= s.rows;
    if (g.size() >= 2) {
      for (const auto* r : g)
        s.variance += (r->estimate - mean) * (r->estimate - mean);
      s.variance /= double(g.size() - 1);
    }
    out.push_back(std::move(s));
  }
  return out;
}

void write_summary_csv(const std::string& path, const std::vector<MethodSummary>& rows) {
  std::ofstream os(path);
  require(bool(os), "cannot open " + path + " for writing");
  os << "method,rows,mean_abs_error,mean_sq_error,variance,mean_points\n";
  for (const auto& s : rows) {
    os << s.method << "," << s.rows << ",";
    os << (s.has_truth ? format_g17(s.mean_abs) : std::string()) << ",";
    os << format_g17(s.mean_sq) << "," << format_g17(s.variance) << ","
       << format_g17(s.mean_points) << "\n";
  }
}

// ---- targets and observables -----------------------------------------------

TargetInfo target_registry(const std::string& name, int d) {
  TargetInfo info;
  if (name == "b2-composite") {
    require(d == 0 || d == 3, "target b2-composite is three-dimensional");
    info.d = 3;
    info.has_mean = true;
    info.mean = Vec(3);
    info.mean << 1.0 + 4.0 / 6.0, -1.0 + 2.0, 3.0 + 1.0;
    info.sample = [](int n, std::uint64_t seed) {
      require(n >= 1, "target sample size must be >= 1");
      std::mt19937_64 gen(splitmix64(seed ^ 0x6b2d9f4c3e1a8057ULL));
      std::normal_distribution<double> normal(0.0, 1.0);
      std::gamma_distribution<double> gamma4(4.0, 1.0);
      std::gamma_distribution<double> gamma2(2.0, 1.0);
      std::gamma_distribution<double> gamma1(1.0, 2.0);
      std::geometric_distribution<int> geom(0.5);
      const double sd = std::sqrt(2.0);
      Mat pts(n, 3);
      for (int i = 0; i < n; ++i) {
        const double g1 = gamma4(gen), g2 = gamma2(gen);
        pts(i, 0) = 1.0 + sd * normal(gen) + g1 / (g1 + g2);
        pts(i, 1) = -1.0 + sd * normal(gen) + gamma1(gen);
        pts(i, 2) = 3.0 + sd * normal(gen) + double(geom(gen));
      }
      return pts;
    };
    return info;
  }
  if (name == "gauss-prod") {
    require(d >= 1, "target gauss-prod needs a dimension >= 1");
    info.d = d;
    info.has_mean = true;
    info.mean = Vec::Constant(d, 0.2);
    info.sample = [d](int n, std::uint64_t seed) {
      require(n >= 1, "target sample size must be >= 1");
      Rng rng(seed ^ 0x1f83d9abfb41bd6bULL);
      Mat pts(n, d);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) pts(i, j) = 0.2 + rng.normal();
      return pts;
    };
    return info;
  }
  throw ConfigError("unknown target '" + name + "'");
}

std::function<double(const Vec&)> f_registry(const std::string& name) {
  if (name == "identity") return [](const Vec& x) { return x[0]; };
  if (name == "sum") return [](const Vec& x) { return x.sum(); };
  if (name == "square") return [](const Vec& x) { return x[0] * x[0]; };
  throw ConfigError("unknown f '" + name + "'");
}

std::uint64_t derive_seed(std::uint64_t base, int rep) {
  return splitmix64(base ^ (0x9E3779B97F4A7C15ULL * std::uint64_t(rep + 1)));
}

// ---- FCM on recorded paths ---------------------------------------------------

FkeeRun fkee_on_paths(const PathBatch& batch, int stride,
                      const std::function<double(const Vec&)>& f, const Vec& x0,
                      double t0, const MLPSpec& uspec, const LossWeights& w,
                      const SolveConfig& scfg, std::uint64_t init_seed) {
  const CollocationSet colloc = subsample_collocation(batch, stride);
  const BoundarySet boundary = boundary_from_collocation(colloc, f);
  MLP u = MLP::seeded(uspec, init_seed);
  auto solved = solve(std::move(u), colloc, boundary, w, scfg);
  FkeeRun run;
  run.estimate = estimate_expectation(solved.first, x0, t0);
  run.points = long(batch.n_paths) * (batch.grid.M + 1);
  run.fit = std::move(solved.second);
  run.net = std::move(solved.first);
  return run;
}

// ---- experiment runners -------------------------------------------------------

namespace {

struct SdeSetup {
  int d = 1;
  SDECoefficients coeffs;
  Vec x0;
  TimeGrid grid;
  int n_paths = 0;
  int stride = 1;
  std::function<double(const Vec&)> f;
  double truth = 0.0;
  std::string fkee_method = "fkee";
  std::string base_method = "terminal-avg";
};

MLPSpec read_uspec(Config& cfg, int d) {
  MLPSpec spec = default_solution_spec(d);
  const int width = cfg.get_int("width", 0);
  const int layers = cfg.get_int("layers", 2);
  require(layers >= 1, "layers must be >= 1");
  if (width > 0) spec.hidden.assign(std::size_t(layers), width);
  return spec;
}

TimeGrid read_grid(Config& cfg, double def_T, double def_h) {
  const double T = cfg.get_double("t_final", def_T);
  const double h = cfg.get_double("h", def_h);
  require(T > 0 && h > 0, "t_final and h must be positive");
  const int M = int(std::lround(T / h));
  require(M >= 1 && std::abs(M * h - T) <= 1e-9 * std::max(1.0, T),
          "t_final must be an integer multiple of h");
  return TimeGrid{0.0, h, M};
}

// shared runner for the SDE experiments: a terminal-average baseline and the
// FCM estimate trained on the same paths
void run_sde_experiment(Config& cfg, const std::string& id, const SdeSetup& setup,
                        const MLPSpec& uspec, const LossWeights& w,
                        const SolveConfig& scfg, int m_rep, std::uint64_t seed,
                        std::vector<EstimateReport>& rows) {
  const std::string hash = cfg.hash_hex();
  for (int rep = 0; rep < m_rep; ++rep) {
    const std::uint64_t rep_seed = derive_seed(seed, rep);
    Stopwatch sim_sw;
    const NoiseSource noise{rep_seed};
    const PathBatch batch =
        simulate(setup.coeffs, setup.x0, setup.grid, noise, setup.n_paths);
    const double sim_s = sim_sw.seconds();
    const long points = long(setup.n_paths) * (setup.grid.M + 1);

    Stopwatch base_sw;
    double base = 0.0;
    for (int p = 0; p < setup.n_paths; ++p)
      base += setup.f(batch.state_vec(p, setup.grid.M));
    base /= setup.n_paths;

    EstimateReport br;
    br.experiment = id;
    br.method = setup.base_method;
    br.n_or_d = setup.d;
    br.estimate = base;
    br.has_truth = true;
    br.truth = setup.truth;
    br.abs_error = std::abs(base - setup.truth);
    br.points_used = points;
    br.wall_time_s = sim_s + base_sw.seconds();
    br.seed = rep_seed;
    br.config_hash = hash;
    rows.push_back(br);

    Stopwatch fk_sw;
    const FkeeRun run = fkee_on_paths(batch, setup.stride, setup.f, setup.x0,
                                      setup.grid.t0, uspec, w, scfg,
                                      derive_seed(rep_seed, 7));
    EstimateReport fr = br;
    fr.method = setup.fkee_method;
    fr.estimate = run.estimate;
    fr.abs_error = std::abs(run.estimate - setup.truth);
    fr.wall_time_s = sim_s + fk_sw.seconds();
    rows.push_back(fr);
  }
}

SDECoefficients unit_brownian() {
  SDECoefficients c;
  c.diagonal = true;
  c.drift = [](const Vec& x, double) { return Vec(Vec::Zero(x.size())); };
  c.diff_diag = [](const Vec& x, double) { return Vec(Vec::Ones(x.size())); };
  return c;
}

SDECoefficients ou_toward_one() {
  SDECoefficients c;
  c.diagonal = true;
  c.drift = [](const Vec& x, double) { return Vec(0.5 * (Vec::Ones(x.size()) - x)); };
  c.diff_diag = [](const Vec& x, double) { return Vec(Vec::Ones(x.size())); };
  return c;
}

void run_resample(Config& cfg, std::uint64_t seed, const std::string& out_dir,
                  std::vector<EstimateReport>& rows) {
  const std::string target_name = cfg.get_str("target", "b2-composite");
  const int n_samples = cfg.get_int("n_samples", 500);
  const int resample_n = cfg.get_int("resample_n", 500);
  const TimeGrid grid = read_grid(cfg, 0.2, 0.025);
  // one full-batch Adam step per epoch; recipes quoted in mini-batch data
  // passes scale by passes * ceil(n / 32)
  const int epochs = cfg.get_int("epochs", 4800);
  const double lr = cfg.get_double("lr", 1e-3);
  const double epsilon = cfg.get_double("epsilon", 0.0);
  const std::string loss_name = cfg.get_str("loss", "w2");
  const double sink_eps = cfg.get_double("sinkhorn_eps", 1e-2);
  const int sink_iters = cfg.get_int("sinkhorn_iters", 200);
  const int hidden_w = cfg.get_int("bridge_width", 32);
  const int hidden_l = cfg.get_int("bridge_layers", 2);
  const int m_rep = cfg.get_int("m_rep", 1);
  const int dim = cfg.get_int("d", 0);
  TargetInfo target = target_registry(target_name, dim);
  cfg.finish();
  const std::string hash = cfg.hash_hex();

  BridgeFitConfig bcfg;
  bcfg.epochs = epochs;
  bcfg.lr = lr;
  bcfg.epsilon = epsilon;
  bcfg.sinkhorn.eps = sink_eps;
  bcfg.sinkhorn.iters = sink_iters;
  if (loss_name == "w2")
    bcfg.loss = BridgeLossKind::w2_marginal;
  else if (loss_name == "sinkhorn")
    bcfg.loss = BridgeLossKind::sinkhorn;
  else
    throw ConfigError("unknown loss '" + loss_name + "' (w2 | sinkhorn)");

  for (int rep = 0; rep < m_rep; ++rep) {
    const std::uint64_t rep_seed = derive_seed(seed, rep);
    Stopwatch sw;
    SampleCloud data;
    data.points = target.sample(n_samples, derive_seed(rep_seed, 1));
    BridgeModel model = BridgeModel::make(
        target.d, grid, std::vector<int>(std::size_t(hidden_l), hidden_w),
        derive_seed(rep_seed, 2));
    bcfg.noise_seed = derive_seed(rep_seed, 3);
    auto fitted = fit(std::move(model), BridgeObjective::terminal(data), bcfg);
    const SampleCloud out = resample(fitted.first, resample_n, derive_seed(rep_seed, 4));
    const double wall = sw.seconds();

    if (!out_dir.empty() && rep == 0)
      save_bridge(out_dir + "/bridge.ckpt", fitted.first);

    for (int j = 0; j < target.d; ++j) {
      EstimateReport r;
      r.experiment = "resample";
      r.method = "resample-mean-x" + std::to_string(j + 1);
      r.n_or_d = target.d;
      r.estimate = out.points.col(j).mean();
      r.has_truth = true;
      r.truth = data.points.col(j).mean();
      r.abs_error = std::abs(r.estimate - r.truth);
      r.points_used = n_samples;
      r.wall_time_s = wall;
      r.seed = rep_seed;
      r.config_hash = hash;
      rows.push_back(r);
    }
    EstimateReport r;
    r.experiment = "resample";
    r.method = "resample-w2";
    r.n_or_d = target.d;
    r.estimate = w2_marginal_sum(out, data);
    r.has_truth = false;
    r.points_used = n_samples;
    r.wall_time_s = wall;
    r.seed = rep_seed;
    r.config_hash = hash;
    rows.push_back(r);
  }
}

GpfBudget read_gpf_budget(Config& cfg) {
  GpfBudget b;
  b.chains = cfg.get_int("chains", b.chains);
  b.sweeps = cfg.get_int("sweeps", b.sweeps);
  b.etmc_sweeps = cfg.get_int("etmc_sweeps", b.etmc_sweeps);
  b.burn_in = cfg.get_int("burn_in", b.burn_in);
  b.fkee_chains = cfg.get_int("fkee_chains", b.fkee_chains);
  b.fkee_sweeps = cfg.get_int("fkee_sweeps", b.fkee_sweeps);
  b.moments = cfg.get_int("moments", b.moments);
  const int bw = cfg.get_int("bridge_width", 16);
  const int bl = cfg.get_int("bridge_layers", 2);
  b.bridge_hidden.assign(std::size_t(bl), bw);
  b.bridge_epochs = cfg.get_int("bridge_epochs", b.bridge_epochs);
  b.bridge_lr = cfg.get_double("bridge_lr", b.bridge_lr);
  b.fcm_width = cfg.get_int("fcm_width", b.fcm_width);
  b.fcm_epochs = cfg.get_int("fcm_epochs", b.fcm_epochs);
  b.fcm_lr = cfg.get_double("fcm_lr", b.fcm_lr);
  b.fcm_stride = cfg.get_int("fcm_stride", b.fcm_stride);
  b.fcm_paths = cfg.get_int("fcm_paths", b.fcm_paths);
  return b;
}

void run_ising(Config& cfg, std::uint64_t seed, std::vector<EstimateReport>& rows) {
  const int n = cfg.get_int("n", 2);
  require(n >= 1, "lattice size n must be >= 1");
  const bool periodic = cfg.get_bool("periodic", false);
  const double beta1 = cfg.get_double("beta1", -0.02);
  const double beta2 = cfg.get_double("beta2", 0.0);
  const std::string est_name = cfg.get_str("estimator", "lln");
  const GpfEstimator est = parse_gpf_estimator(est_name);
  const int m_rep = cfg.get_int("m_rep", 5);
  const GpfBudget budget = read_gpf_budget(cfg);
  cfg.finish();
  const std::string hash = cfg.hash_hex();

  const LatticeSpec lat = periodic ? LatticeSpec::periodic(n) : LatticeSpec::open(n);
  GpfTruth truth;
  const bool has_truth = n <= 4;
  if (has_truth) truth = enumeration_truth(lat, beta1, beta2);

  for (int rep = 0; rep < m_rep; ++rep) {
    const std::uint64_t rep_seed = derive_seed(seed, rep);
    Stopwatch sw;
    const GpfEstimate e = gpf_ratio_experiment(lat, beta1, beta2, est, budget, rep_seed);
    const double wall = sw.seconds();
    auto push = [&](const std::string& what, double value, double tv, long pts) {
      EstimateReport r;
      r.experiment = "ising";
      r.method = est_name + ":" + what;
      r.n_or_d = n;
      r.estimate = value;
      r.has_truth = has_truth;
      if (has_truth) {
        r.truth = tv;
        r.abs_error = std::abs(value - tv);
      }
      r.points_used = pts;
      r.wall_time_s = wall;
      r.seed = rep_seed;
      r.config_hash = hash;
      rows.push_back(r);
    };
    push("wi", e.wi, truth.wi, e.points_wi);
    push("vi", e.vi, truth.vi, e.points_vi);
    push("q", e.q, truth.q, e.points_wi + e.points_vi);
  }
}

}  // namespace

std::vector<EstimateReport> run_experiment(Config& cfg, const std::string& out_dir) {
  const std::string id = cfg.req_str("experiment");
  const std::uint64_t seed = cfg.get_u64("seed", 1);
  // accepted for the record: runs are single-threaded with counter-based
  // noise, so they are deterministic either way
  (void)cfg.get_bool("deterministic", false);
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
  std::vector<EstimateReport> rows;

  if (id == "resample") {
    run_resample(cfg, seed, out_dir, rows);
  } else if (id == "ising") {
    run_ising(cfg, seed, rows);
  } else {
    SdeSetup setup;
    LossWeights w;
    w.lambda1 = cfg.get_double("lambda1", 1.0);
    w.lambda2 = cfg.get_double("lambda2", 1.0);
    SolveConfig scfg;
    scfg.lr = cfg.get_double("lr", 1e-3);
    scfg.epsilon = cfg.get_double("epsilon", 0.0);
    int m_rep = 1;

    if (id == "heat-oracle") {
      setup.d = 1;
      setup.coeffs = unit_brownian();
      setup.x0 = Vec::Zero(1);
      setup.grid = read_grid(cfg, 1.0, 0.05);
      setup.n_paths = cfg.get_int("n_paths", 50);
      setup.stride = cfg.get_int("stride", 4);
      setup.f = f_registry(cfg.get_str("f", "square"));
      setup.truth = setup.grid.T();  // u(x,t) = x^2 + (T - t) at (0, 0)
      scfg.epochs = cfg.get_int("epochs", 1200);
      m_rep = cfg.get_int("m_rep", 1);
    } else if (id == "ou-oracle") {
      setup.d = 1;
      setup.coeffs = ou_toward_one();
      setup.x0 = Vec::Zero(1);
      setup.grid = read_grid(cfg, 10.0, 0.1);
      setup.n_paths = cfg.get_int("n_paths", 50);
      setup.stride = cfg.get_int("stride", 10);
      setup.f = f_registry(cfg.get_str("f", "identity"));
      setup.truth = 1.0 - std::exp(-0.5 * setup.grid.T());
      scfg.epochs = cfg.get_int("epochs", 1500);
      m_rep = cfg.get_int("m_rep", 1);
    } else if (id == "langevin1d") {
      setup.d = 1;
      setup.coeffs = ou_toward_one();  // 0.5 * grad log N(1,1) = (1 - x)/2
      setup.x0 = Vec::Zero(1);
      setup.grid = read_grid(cfg, 10.0, 0.01);
      setup.n_paths = cfg.get_int("n_paths", 5);
      setup.stride = cfg.get_int("stride", 100);
      setup.f = f_registry(cfg.get_str("f", "identity"));
      setup.truth = 1.0;
      setup.base_method = "lmcmc";
      scfg.epochs = cfg.get_int("epochs", 1500);
      m_rep = cfg.get_int("m_rep", 30);
    } else if (id == "jacobi") {
      setup.d = 1;
      setup.grid = read_grid(cfg, 1.0, 0.01);
      setup.coeffs = jacobi_sde(setup.grid.h);
      setup.x0 = Vec::Constant(1, cfg.get_double("x0", 0.5));
      setup.n_paths = cfg.get_int("n_paths", 50);
      setup.stride = cfg.get_int("stride", 10);
      setup.f = f_registry(cfg.get_str("f", "identity"));
      setup.truth = 0.5;
      scfg.epochs = cfg.get_int("epochs", 1200);
      m_rep = cfg.get_int("m_rep", 1);
    } else if (id == "gauss-highdim") {
      const int d = cfg.get_int("d", 5);
      require(d >= 1, "dimension d must be >= 1");
      setup.d = d;
      setup.coeffs = langevin_sde(
          [](const Vec& x) { return Vec(Vec::Constant(x.size(), 0.2) - x); });
      setup.x0 = Vec::Zero(d);
      setup.grid = read_grid(cfg, 10.0, 0.1);
      setup.n_paths = cfg.get_int("n_paths", 50);
      setup.stride = cfg.get_int("stride", 10);
      setup.f = f_registry(cfg.get_str("f", "sum"));
      setup.truth = 0.2 * d;
      setup.fkee_method = "ldm-fcm";
      setup.base_method = "lmcmc";
      scfg.epochs = cfg.get_int("epochs", 400);
      m_rep = cfg.get_int("m_rep", 30);
    } else {
      throw ConfigError("unknown experiment '" + id +
                        "' (ising | resample | langevin1d | jacobi | gauss-highdim | "
                        "heat-oracle | ou-oracle)");
    }

    const MLPSpec uspec = read_uspec(cfg, setup.d);
    cfg.finish();
    run_sde_experiment(cfg, id, setup, uspec, w, scfg, m_rep, seed, rows);
  }

  finalize_sq_errors(rows);
  if (!out_dir.empty()) {
    write_reports_csv(out_dir + "/results.csv", rows);
    std::ofstream os(out_dir + "/manifest.txt");
    require(bool(os), "cannot open " + out_dir + "/manifest.txt for writing");
    for (const auto& kv : cfg.effective()) os << kv.first << "=" << kv.second << "\n";
    os << "config_hash=" << cfg.hash_hex() << "\n";
  }
  return rows;
}

// ---- partition-ratio experiment ----------------------------------------------

GpfEstimator parse_gpf_estimator(const std::string& name) {
  if (name == "lln") return GpfEstimator::lln;
  if (name == "etmc") return GpfEstimator::etmc;
  if (name == "enum") return GpfEstimator::enumerate_exact;
  if (name == "fkee-direct") return GpfEstimator::fkee_direct;
  if (name == "fkee-spin") return GpfEstimator::fkee_spin;
  throw ConfigError("unknown estimator '" + name +
                    "' (lln | etmc | enum | fkee-direct | fkee-spin)");
}

namespace {

// expectation of exp(-delta * H) under the beta-chain, by the chosen estimator
struct GpfSide {
  double value = 0.0;
  long points = 0;
};

GpfSide gpf_lln(const LatticeSpec& lat, double beta, double delta,
                const GpfBudget& b, std::uint64_t seed) {
  std::vector<double> values;
  for (int c = 0; c < b.chains; ++c) {
    const GibbsChain chain = run_chain(lat, beta, b.sweeps, derive_seed(seed, c));
    values.push_back(gpf_observable(lat, chain.states.back(), delta));
  }
  return {lln_estimate(values), long(b.chains) * b.sweeps};
}

GpfSide gpf_etmc(const LatticeSpec& lat, double beta, double delta,
                 const GpfBudget& b, std::uint64_t seed) {
  const GibbsChain chain = run_chain(lat, beta, b.etmc_sweeps, seed);
  std::vector<double> path;
  for (const auto& s : chain.states) path.push_back(gpf_observable(lat, s, delta));
  return {etmc_estimate(path, b.burn_in), long(b.etmc_sweeps)};
}

// bridge the observable chain (fkee-direct: the scalar exp(-delta H) series;
// fkee-spin: the raw spin vectors) and read the expectation off the FCM net
GpfSide gpf_fkee(const LatticeSpec& lat, double beta, double delta, bool spin,
                 const GpfBudget& b, std::uint64_t seed) {
  const int C = b.fkee_chains, S = b.fkee_sweeps;
  require(b.moments >= 1 && b.moments <= S, "moments must be in [1, fkee_sweeps]");
  require(S % b.moments == 0, "fkee_sweeps must be a multiple of moments");
  const int d = spin ? lat.sites() : 1;

  std::vector<GibbsChain> chains;
  chains.reserve(std::size_t(C));
  for (int c = 0; c < C; ++c)
    chains.push_back(run_chain(lat, beta, S, derive_seed(seed, 100 + c)));

  // chain time runs over [0, 1]; sweep s sits at t = s / S
  const TimeGrid grid{0.0, 1.0 / S, S};
  ChainMarginals marg;
  const int step = S / b.moments;
  for (int s = step; s <= S; s += step) {
    SampleCloud cloud;
    cloud.points = Mat(C, d);
    for (int c = 0; c < C; ++c) {
      const SpinState& st = chains[std::size_t(c)].states[std::size_t(s - 1)];
      if (spin)
        for (int i = 0; i < d; ++i) cloud.points(c, i) = double(st[std::size_t(i)]);
      else
        cloud.points(c, 0) = gpf_observable(lat, st, delta);
    }
    marg.times.push_back(grid.time(s));
    marg.clouds.push_back(std::move(cloud));
  }

  BridgeModel model =
      BridgeModel::make(d, grid, b.bridge_hidden, derive_seed(seed, 1));
  BridgeFitConfig bcfg;
  bcfg.epochs = b.bridge_epochs;
  bcfg.lr = b.bridge_lr;
  bcfg.noise_seed = derive_seed(seed, 2);
  auto fitted = fit(std::move(model), BridgeObjective::chain(std::move(marg)), bcfg);

  const PathBatch batch = bridge_paths(fitted.first, b.fcm_paths, derive_seed(seed, 3));
  MLPSpec uspec;
  uspec.input_dim = d + 1;
  uspec.hidden = {b.fcm_width, b.fcm_width};
  uspec.output_dim = 1;
  SolveConfig scfg;
  scfg.epochs = b.fcm_epochs;
  scfg.lr = b.fcm_lr;
  const auto f = spin ? spin_boundary_f(beta, beta + 2.0 * delta, lat)
                      : f_registry("identity");
  const FkeeRun run = fkee_on_paths(batch, b.fcm_stride, f, fitted.first.theta3,
                                    grid.t0, uspec, LossWeights{}, scfg,
                                    derive_seed(seed, 4));
  return {run.estimate, long(C) * S};
}

}  // namespace

GpfEstimate gpf_ratio_experiment(const LatticeSpec& lat, double beta1, double beta2,
                                 GpfEstimator estimator, const GpfBudget& budget,
                                 std::uint64_t seed) {
  const double delta = 0.5 * (beta2 - beta1);
  GpfEstimate out;
  if (delta == 0.0) {
    // degenerate ratio: the observable is identically 1
    out.wi = out.vi = out.q = 1.0;
    return out;
  }
  GpfSide wi, vi;
  switch (estimator) {
    case GpfEstimator::lln:
      wi = gpf_lln(lat, beta1, delta, budget, derive_seed(seed, 10));
      vi = gpf_lln(lat, beta2, -delta, budget, derive_seed(seed, 20));
      break;
    case GpfEstimator::etmc:
      wi = gpf_etmc(lat, beta1, delta, budget, derive_seed(seed, 10));
      vi = gpf_etmc(lat, beta2, -delta, budget, derive_seed(seed, 20));
      break;
    case GpfEstimator::enumerate_exact: {
      const GpfTruth t = enumeration_truth(lat, beta1, beta2);
      out.wi = t.wi;
      out.vi = t.vi;
      out.q = t.q;
      return out;
    }
    case GpfEstimator::fkee_direct:
      wi = gpf_fkee(lat, beta1, delta, false, budget, derive_seed(seed, 10));
      vi = gpf_fkee(lat, beta2, -delta, false, budget, derive_seed(seed, 20));
      break;
    case GpfEstimator::fkee_spin:
      wi = gpf_fkee(lat, beta1, delta, true, budget, derive_seed(seed, 10));
      vi = gpf_fkee(lat, beta2, -delta, true, budget, derive_seed(seed, 20));
      break;
  }
  out.wi = wi.value;
  out.vi = vi.value;
  out.points_wi = wi.points;
  out.points_vi = vi.points;
  require(out.wi != 0.0, "wi estimate is zero; ratio undefined");
  out.q = out.vi / out.wi;
  return out;
}

}  // namespace fkee

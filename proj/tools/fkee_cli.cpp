#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fkee/checkpoint.hpp"
#include "fkee/harness.hpp"

namespace {

using namespace fkee;

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool deterministic = false;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "flat key=value config file")
      ->required();
  cmd->add_option("--seed", o.seed, "override the config seed")
      ->each([&o](const std::string&) { o.seed_set = true; });
  cmd->add_option("--out", o.out_dir, "output directory");
  cmd->add_flag("--deterministic", o.deterministic,
                "pin deterministic execution (runs are deterministic regardless)");
}

Config load_config(const CommonOpts& o) {
  Config cfg = Config::from_file(o.config_path);
  if (o.seed_set) cfg.set("seed", std::to_string(o.seed));
  if (o.deterministic) cfg.set("deterministic", "true");
  return cfg;
}

void ensure_out(const CommonOpts& o) {
  require(!o.out_dir.empty(), "--out is required for this command");
  std::filesystem::create_directories(o.out_dir);
}

Vec parse_vec(const std::string& s) {
  std::vector<double> vals;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const std::size_t comma = s.find(',', pos);
    const std::string tok =
        s.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    try {
      std::size_t used = 0;
      vals.push_back(std::stod(tok, &used));
      require(used == tok.size(), "bad vector entry '" + tok + "'");
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception&) {
      throw ConfigError("bad vector entry '" + tok + "'");
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  Vec v(Eigen::Index(vals.size()));
  for (std::size_t i = 0; i < vals.size(); ++i) v[Eigen::Index(i)] = vals[i];
  return v;
}

void write_manifest(const Config& cfg, const std::string& out_dir) {
  std::ofstream os(out_dir + "/manifest.txt");
  require(bool(os), "cannot open " + out_dir + "/manifest.txt for writing");
  for (const auto& kv : cfg.effective()) os << kv.first << "=" << kv.second << "\n";
  os << "config_hash=" << cfg.hash_hex() << "\n";
}

void write_trace(const std::string& path, const FitReport& rep) {
  std::ofstream os(path);
  require(bool(os), "cannot open " + path + " for writing");
  os << "epoch,loss\n";
  for (std::size_t i = 0; i < rep.trace.size(); ++i)
    os << i << "," << format_g17(rep.trace[i]) << "\n";
}

// fit a bridge to a sampled target (or a point cloud csv) and checkpoint it
void run_dbm_fit(const CommonOpts& o) {
  ensure_out(o);
  Config cfg = load_config(o);
  const std::uint64_t seed = cfg.get_u64("seed", 1);
  (void)cfg.get_bool("deterministic", false);

  SampleCloud data;
  if (cfg.has("data_csv")) {
    const std::string path = cfg.req_str("data_csv");
    std::ifstream is(path);
    require(bool(is), "cannot open data_csv " + path);
    std::vector<Vec> pts;
    std::string line;
    while (std::getline(is, line)) {
      const std::size_t hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
      pts.push_back(parse_vec(line));
      require(pts.back().size() == pts.front().size(),
              "ragged row in data_csv " + path);
    }
    require(!pts.empty(), "data_csv " + path + " holds no points");
    data.points = Mat(Eigen::Index(pts.size()), pts.front().size());
    for (std::size_t i = 0; i < pts.size(); ++i)
      data.points.row(Eigen::Index(i)) = pts[i].transpose();
  } else {
    const std::string target_name = cfg.get_str("target", "b2-composite");
    const int dim = cfg.get_int("d", 0);
    const int n_samples = cfg.get_int("n_samples", 500);
    TargetInfo target = target_registry(target_name, dim);
    data.points = target.sample(n_samples, derive_seed(seed, 1));
  }

  const double T = cfg.get_double("t_final", 0.2);
  const double h = cfg.get_double("h", 0.025);
  require(T > 0 && h > 0, "t_final and h must be positive");
  const int M = int(std::lround(T / h));
  require(M >= 1 && std::abs(M * h - T) <= 1e-9 * std::max(1.0, T),
          "t_final must be an integer multiple of h");
  const TimeGrid grid{0.0, h, M};

  BridgeFitConfig bcfg;
  bcfg.epochs = cfg.get_int("epochs", 4800);
  bcfg.lr = cfg.get_double("lr", 1e-3);
  bcfg.epsilon = cfg.get_double("epsilon", 0.0);
  bcfg.noise_seed = derive_seed(seed, 3);
  const std::string loss_name = cfg.get_str("loss", "w2");
  bcfg.sinkhorn.eps = cfg.get_double("sinkhorn_eps", 1e-2);
  bcfg.sinkhorn.iters = cfg.get_int("sinkhorn_iters", 200);
  if (loss_name == "w2")
    bcfg.loss = BridgeLossKind::w2_marginal;
  else if (loss_name == "sinkhorn")
    bcfg.loss = BridgeLossKind::sinkhorn;
  else
    throw ConfigError("unknown loss '" + loss_name + "' (w2 | sinkhorn)");

  const int bw = cfg.get_int("bridge_width", 32);
  const int bl = cfg.get_int("bridge_layers", 2);
  const int resample_n = cfg.get_int("resample_n", 0);
  const int paths_n = cfg.get_int("paths_n", 0);
  cfg.finish();

  BridgeModel model =
      BridgeModel::make(data.d(), grid, std::vector<int>(std::size_t(bl), bw),
                        derive_seed(seed, 2));
  auto fitted = fit(std::move(model), BridgeObjective::terminal(data), bcfg);

  save_bridge(o.out_dir + "/bridge.ckpt", fitted.first);
  write_trace(o.out_dir + "/fit_trace.csv", fitted.second);
  write_manifest(cfg, o.out_dir);
  if (resample_n > 0) {
    const SampleCloud rs = resample(fitted.first, resample_n, derive_seed(seed, 4));
    std::ofstream os(o.out_dir + "/resampled.csv");
    require(bool(os), "cannot open resampled.csv for writing");
    for (int i = 0; i < rs.n(); ++i) {
      for (int j = 0; j < rs.d(); ++j)
        os << (j ? "," : "") << format_g17(rs.points(i, j));
      os << "\n";
    }
  }
  // resimulated bridge paths feed `fcm solve` as its collocation source
  if (paths_n > 0) {
    const PathBatch pb = bridge_paths(fitted.first, paths_n, derive_seed(seed, 5));
    write_pathbatch_csv(pb, o.out_dir + "/paths.csv");
  }
  std::cout << "dbm fit: " << fitted.second.epochs_run << " epochs, final loss "
            << format_g17(fitted.second.final_loss) << " ("
            << fitted.second.stop_reason << "), checkpoint " << o.out_dir
            << "/bridge.ckpt\n";
}

// train the PDE net on recorded paths and read off the expectation
void run_fcm_solve(const CommonOpts& o) {
  const auto started = std::chrono::steady_clock::now();
  ensure_out(o);
  Config cfg = load_config(o);
  const std::uint64_t seed = cfg.get_u64("seed", 1);
  (void)cfg.get_bool("deterministic", false);

  const std::string paths_csv = cfg.req_str("paths_csv");
  const PathBatch batch = read_pathbatch_csv(paths_csv);
  const auto f = f_registry(cfg.get_str("f", "identity"));
  const int stride = cfg.get_int("stride", 1);

  MLPSpec uspec = default_solution_spec(batch.d);
  const int width = cfg.get_int("width", 0);
  const int layers = cfg.get_int("layers", 2);
  require(layers >= 1, "layers must be >= 1");
  if (width > 0) uspec.hidden.assign(std::size_t(layers), width);

  LossWeights w;
  w.lambda1 = cfg.get_double("lambda1", 1.0);
  w.lambda2 = cfg.get_double("lambda2", 1.0);
  SolveConfig scfg;
  scfg.epochs = cfg.get_int("epochs", 1000);
  scfg.lr = cfg.get_double("lr", 1e-3);
  scfg.epsilon = cfg.get_double("epsilon", 0.0);

  Vec x0 = batch.state_vec(0, 0);
  if (cfg.has("x0")) {
    x0 = parse_vec(cfg.req_str("x0"));
    require(int(x0.size()) == batch.d, "x0 must have " + std::to_string(batch.d) +
                                           " entries");
  }
  const double t0 = cfg.get_double("t0", batch.grid.t0);
  cfg.finish();

  const FkeeRun run =
      fkee_on_paths(batch, stride, f, x0, t0, uspec, w, scfg, derive_seed(seed, 7));

  save_mlp(o.out_dir + "/solution.ckpt", run.net);
  write_trace(o.out_dir + "/fit_trace.csv", run.fit);
  write_manifest(cfg, o.out_dir);
  EstimateReport r;
  r.experiment = "fcm-solve";
  r.method = "fkee";
  r.n_or_d = batch.d;
  r.estimate = run.estimate;
  r.points_used = run.points;
  r.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
          .count();
  r.seed = seed;
  r.config_hash = cfg.hash_hex();
  write_reports_csv(o.out_dir + "/results.csv", {r});
  std::cout << "fcm solve: estimate " << format_g17(run.estimate) << " after "
            << run.fit.epochs_run << " epochs (" << run.fit.stop_reason
            << "), final loss " << format_g17(run.fit.final_loss) << "\n";
}

void print_rows(const std::vector<EstimateReport>& rows) {
  for (const auto& s : compare_estimators(rows)) {
    std::cout << "  " << s.method << ": mean";
    if (s.has_truth) std::cout << " abs err " << format_g17(s.mean_abs) << ",";
    std::cout << " sq err " << format_g17(s.mean_sq) << " over " << s.rows
              << " rows\n";
  }
}

void run_mcmc(const CommonOpts& o) {
  ensure_out(o);
  Config cfg = load_config(o);
  const std::string id = cfg.get_str("experiment", "");
  require(id == "langevin1d" || id == "jacobi" || id == "gauss-highdim" ||
              id == "heat-oracle" || id == "ou-oracle" || id == "resample",
          "mcmc run handles langevin1d | jacobi | gauss-highdim | heat-oracle | "
          "ou-oracle | resample; got '" + id + "'");
  const auto rows = run_experiment(cfg, o.out_dir);
  std::cout << "mcmc run: wrote " << rows.size() << " rows to " << o.out_dir
            << "/results.csv\n";
  if (rows.size() >= 2) print_rows(rows);
}

void run_ising_cmd(const CommonOpts& o) {
  ensure_out(o);
  Config cfg = load_config(o);
  const std::string id = cfg.get_str("experiment", "ising");
  require(id == "ising", "the ising command runs experiment=ising; got '" + id + "'");
  cfg.set("experiment", id);
  const auto rows = run_experiment(cfg, o.out_dir);
  std::cout << "ising: wrote " << rows.size() << " rows to " << o.out_dir
            << "/results.csv\n";
  if (rows.size() >= 2) print_rows(rows);
}

void run_bench(const CommonOpts& o) {
  ensure_out(o);
  Config cfg = load_config(o);
  const auto rows = run_experiment(cfg, o.out_dir);
  const auto summary = compare_estimators(rows);
  write_summary_csv(o.out_dir + "/summary.csv", summary);
  std::cout << "bench: " << rows.size() << " rows, summary in " << o.out_dir
            << "/summary.csv\n";
  print_rows(rows);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Feynman-Kac operator expectation estimation toolkit"};
  app.require_subcommand(1);

  CommonOpts dbm_o, fcm_o, mcmc_o, ising_o, bench_o;

  CLI::App* dbm = app.add_subcommand("dbm", "diffusion bridge model");
  dbm->require_subcommand(1);
  CLI::App* dbm_fit = dbm->add_subcommand("fit", "fit a bridge and checkpoint it");
  add_common(dbm_fit, dbm_o);

  CLI::App* fcm = app.add_subcommand("fcm", "Feynman-Kac PDE model");
  fcm->require_subcommand(1);
  CLI::App* fcm_solve =
      fcm->add_subcommand("solve", "train the PDE net on recorded paths");
  add_common(fcm_solve, fcm_o);

  CLI::App* mcmc = app.add_subcommand("mcmc", "MCMC experiment harness");
  mcmc->require_subcommand(1);
  CLI::App* mcmc_run = mcmc->add_subcommand("run", "run a configured experiment");
  add_common(mcmc_run, mcmc_o);

  CLI::App* ising =
      app.add_subcommand("ising", "partition-ratio experiment on the spin lattice");
  add_common(ising, ising_o);

  CLI::App* bench =
      app.add_subcommand("bench", "run an experiment and summarize estimators");
  add_common(bench, bench_o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*dbm_fit) run_dbm_fit(dbm_o);
    if (*fcm_solve) run_fcm_solve(fcm_o);
    if (*mcmc_run) run_mcmc(mcmc_o);
    if (*ising) run_ising_cmd(ising_o);
    if (*bench) run_bench(bench_o);
  } catch (const fkee::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const fkee::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}

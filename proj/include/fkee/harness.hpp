#ifndef FKEE_HARNESS_HPP
#define FKEE_HARNESS_HPP

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "fkee/bridge.hpp"
#include "fkee/fkpde.hpp"
#include "fkee/gibbs.hpp"

namespace fkee {

// Flat key=value configuration ('#' starts a comment). Every key that an
// experiment reads is recorded with its effective (possibly default) value;
// finish() rejects keys the run never consumed, and config_hash() digests the
// effective map so any semantically meaningful change moves the hash.
class Config {
 public:
  static Config from_file(const std::string& path);
  static Config from_string(const std::string& text);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const { return raw_.count(key) > 0; }

  std::string get_str(const std::string& key, const std::string& def);
  double get_double(const std::string& key, double def);
  int get_int(const std::string& key, int def);
  std::uint64_t get_u64(const std::string& key, std::uint64_t def);
  bool get_bool(const std::string& key, bool def);
  std::string req_str(const std::string& key);

  void finish() const;  // throws ConfigError on unconsumed keys
  std::uint64_t config_hash() const;
  std::string hash_hex() const;
  const std::map<std::string, std::string>& effective() const { return effective_; }

 private:
  std::string fetch(const std::string& key, const std::string& def, bool required);
  std::map<std::string, std::string> raw_;
  std::map<std::string, std::string> effective_;
  mutable std::map<std::string, bool> used_;
};

std::uint64_t fnv1a64(const std::string& bytes);

// one result row; the CSV schema is frozen:
// experiment, method, n_or_d, estimate, truth, abs_error, sq_error,
// points_used, wall_time_s, seed, config_hash
struct EstimateReport {
  std::string experiment;
  std::string method;
  int n_or_d = 0;
  double estimate = 0.0;
  bool has_truth = false;
  double truth = 0.0;
  double abs_error = 0.0;
  double sq_error = 0.0;
  long points_used = 0;
  double wall_time_s = 0.0;
  std::uint64_t seed = 0;
  std::string config_hash;
};

// fills sq_error per row against the across-repeat mean of its method
void finalize_sq_errors(std::vector<EstimateReport>& rows);
void write_reports_csv(const std::string& path, const std::vector<EstimateReport>& rows);
std::string report_row_line(const EstimateReport& r);  // one CSV line, no newline

struct MethodSummary {
  std::string method;
  int rows = 0;
  bool has_truth = false;
  double mean_abs = 0.0;   // Absolute value error
  double mean_sq = 0.0;    // Square Error (centered on the across-repeat mean)
  double variance = 0.0;   // unbiased variance of the estimates
  double mean_points = 0.0;
};
std::vector<MethodSummary> compare_estimators(const std::vector<EstimateReport>& rows);
void write_summary_csv(const std::string& path, const std::vector<MethodSummary>& rows);

// named target distributions and f-functions
struct TargetInfo {
  int d = 0;
  std::function<Mat(int n, std::uint64_t seed)> sample;  // n x d
  bool has_mean = false;
  Vec mean;
};
TargetInfo target_registry(const std::string& name, int d);
std::function<double(const Vec&)> f_registry(const std::string& name);

std::uint64_t derive_seed(std::uint64_t base, int rep);

// ---- experiments ----------------------------------------------------------
// runs cfg's experiment, writes <out_dir>/results.csv and <out_dir>/manifest.txt
// (pass an empty out_dir to skip the files) and returns the rows
std::vector<EstimateReport> run_experiment(Config& cfg, const std::string& out_dir);

// FCM on recorded paths: subsample collocation, evaluate f on the terminal
// points, train u, read off u(x0, t0)
struct FkeeRun {
  double estimate = 0.0;
  long points = 0;
  FitReport fit;
  MLP net;
};
FkeeRun fkee_on_paths(const PathBatch& batch, int stride,
                      const std::function<double(const Vec&)>& f, const Vec& x0,
                      double t0, const MLPSpec& uspec, const LossWeights& w,
                      const SolveConfig& scfg, std::uint64_t init_seed);

// ---- partition-ratio experiment on the spin lattice ------------------------
enum class GpfEstimator { lln, etmc, enumerate_exact, fkee_direct, fkee_spin };
GpfEstimator parse_gpf_estimator(const std::string& name);

struct GpfBudget {
  int chains = 100;      // lln: independent chains, terminal states used
  int sweeps = 20;       // lln: sweeps per chain
  int etmc_sweeps = 2000;
  int burn_in = 200;
  int fkee_chains = 50;  // fkee: chains feeding the bridge marginals
  int fkee_sweeps = 40;
  int moments = 10;
  std::vector<int> bridge_hidden = {16, 16};
  // the observable clouds sit near 1 with spread ~1e-2, so the bridge needs
  // enough optimizer travel to pull the softplus diffusion down to that scale
  int bridge_epochs = 1200;
  double bridge_lr = 3e-3;
  int fcm_width = 64;
  int fcm_epochs = 500;
  double fcm_lr = 1e-3;
  int fcm_stride = 4;
  int fcm_paths = 50;  // bridge paths resimulated for collocation
};

struct GpfEstimate {
  double wi = 0.0, vi = 0.0, q = 0.0;
  long points_wi = 0, points_vi = 0;
};
GpfEstimate gpf_ratio_experiment(const LatticeSpec& lat, double beta1, double beta2,
                                 GpfEstimator estimator, const GpfBudget& budget,
                                 std::uint64_t seed);

}  // namespace fkee

#endif

#ifndef FKEE_COMMON_HPP
#define FKEE_COMMON_HPP

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <vector>

namespace fkee {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Bad user-supplied configuration (dimension mismatch, unknown key, ...).
// The CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Runtime numeric failure (divergence, overflow, non-finite loss).
// The CLI maps this to exit code 3.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct FitReport {
  double final_loss = 0.0;
  std::vector<double> trace;
  int epochs_run = 0;
  std::string stop_reason;  // "threshold" | "budget"
  unsigned long long seed = 0;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

inline void check_finite(double v, const std::string& what) {
  if (!std::isfinite(v)) throw NumericError(what + " is not finite");
}

}  // namespace fkee

#endif

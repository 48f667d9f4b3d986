#ifndef FKEE_OTMETRICS_HPP
#define FKEE_OTMETRICS_HPP

#include <vector>

#include "fkee/common.hpp"
#include "fkee/tape.hpp"

namespace fkee {

// Empirical measure: n points in R^d with uniform weights 1/n.
struct SampleCloud {
  Mat points;  // n x d

  int n() const { return int(points.rows()); }
  int d() const { return int(points.cols()); }

  static SampleCloud from_column(const Vec& x) {
    SampleCloud c;
    c.points = x;
    return c;
  }
};

struct SinkhornConfig {
  double eps = 1e-2;
  int iters = 200;
  // Log-domain stabilization; the plain scaling recursion overflows for
  // eps <= 1e-2 on unit-scale costs and is kept only as an explicit opt-out.
  bool log_domain = true;
  bool debiased = false;
};

// Exact 1-d 2-Wasserstein between equally sized clouds:
// sqrt(mean of squared differences of sorted samples).
double w2_1d(const SampleCloud& a, const SampleCloud& b);

// Sum of per-coordinate w2_1d distances (multivariate surrogate).
double w2_marginal_sum(const SampleCloud& a, const SampleCloud& b);

// Entropic OT cost <P, C> with squared Euclidean cost after cfg.iters scaling
// iterations; debiased variant subtracts the self-transport terms.
double sinkhorn_divergence(const SampleCloud& a, const SampleCloud& b,
                           const SinkhornConfig& cfg);

// Differentiable variants over tape variables. Cloud entries are laid out
// row-major: point i, coordinate j at index i*d + j. The sort permutation in
// the 1-d distance is frozen at the evaluation point (ties break by original
// index); Sinkhorn differentiates through the unrolled iterations with
// constant-shift log-sum-exp.
TV tape_w2_1d(Tape& tp, const std::vector<TV>& a, const std::vector<TV>& b);
TV tape_w2_marginal_sum(Tape& tp, const std::vector<TV>& a,
                        const std::vector<TV>& b, int n, int d);
TV tape_sinkhorn(Tape& tp, const std::vector<TV>& a, const std::vector<TV>& b,
                 int na, int nb, int d, const SinkhornConfig& cfg);

}  // namespace fkee

#endif

#include "fkee/otmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace fkee {

namespace {

void check_cloud(const SampleCloud& c, const char* who) {
  require(c.n() >= 1, std::string(who) + ": empty cloud");
  require(c.points.allFinite(), std::string(who) + ": cloud entries must be finite");
}

// indices of x sorted ascending, ties broken by original index
std::vector<int> sort_order(const Vec& x) {
  std::vector<int> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](int i, int j) {
    if (x[i] != x[j]) return x[i] < x[j];
    return i < j;
  });
  return idx;
}

double w2_1d_cols(const Vec& xa, const Vec& xb) {
  std::vector<double> sa(xa.data(), xa.data() + xa.size());
  std::vector<double> sb(xb.data(), xb.data() + xb.size());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  double acc = 0.0;
  for (std::size_t i = 0; i < sa.size(); ++i) {
    const double diff = sa[i] - sb[i];
    acc += diff * diff;
  }
  return std::sqrt(acc / double(sa.size()));
}

double lse_row(const Vec& v) {
  const double m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}

Mat sq_cost(const Mat& a, const Mat& b) {
  const int na = int(a.rows()), nb = int(b.rows());
  Mat c(na, nb);
  for (int i = 0; i < na; ++i)
    for (int j = 0; j < nb; ++j) c(i, j) = (a.row(i) - b.row(j)).squaredNorm();
  return c;
}

// <P, C> after `iters` log-domain iterations, updating f first or g first
double ot_log(const Mat& c, double eps, int iters, bool f_first) {
  const int na = int(c.rows()), nb = int(c.cols());
  const double loga = -std::log(double(na)), logb = -std::log(double(nb));
  Vec f = Vec::Zero(na), g = Vec::Zero(nb);
  auto update_f = [&] {
    for (int i = 0; i < na; ++i)
      f[i] = -eps * lse_row(((g.array() - c.row(i).transpose().array()) / eps + logb).matrix());
  };
  auto update_g = [&] {
    for (int j = 0; j < nb; ++j)
      g[j] = -eps * lse_row(((f.array() - c.col(j).array()) / eps + loga).matrix());
  };
  for (int k = 0; k < iters; ++k) {
    if (f_first) {
      update_f();
      update_g();
    } else {
      update_g();
      update_f();
    }
  }
  double cost = 0.0;
  for (int i = 0; i < na; ++i)
    for (int j = 0; j < nb; ++j) {
      const double logp = loga + logb + (f[i] + g[j] - c(i, j)) / eps;
      cost += std::exp(logp) * c(i, j);
    }
  check_finite(cost, "sinkhorn log-domain cost");
  return cost;
}

// plain scaling recursion; overflows for small eps, by design
double ot_scaling(const Mat& c, double eps, int iters, bool f_first) {
  const int na = int(c.rows()), nb = int(c.cols());
  // per-entry std::exp: Eigen's packet exp clamps instead of underflowing,
  // which would silently turn a degenerate kernel into a uniform one
  Mat k(na, nb);
  for (int i = 0; i < na; ++i)
    for (int j = 0; j < nb; ++j) k(i, j) = std::exp(-c(i, j) / eps);
  const double wa = 1.0 / double(na), wb = 1.0 / double(nb);
  Vec u = Vec::Ones(na), v = Vec::Ones(nb);
  auto bad = [](const Vec& x) { return !x.allFinite() || (x.array() == 0.0).any(); };
  auto update_u = [&] { u = wa / (k * v).array(); };
  auto update_v = [&] { v = wb / (k.transpose() * u).array(); };
  for (int it = 0; it < iters; ++it) {
    if (f_first) {
      update_u();
      update_v();
    } else {
      update_v();
      update_u();
    }
    if (bad(u) || bad(v))
      throw NumericError(
          "sinkhorn scaling iterations overflowed; enable log_domain mode "
          "(required for eps <= 1e-2)");
  }
  const Mat p = u.asDiagonal() * k * v.asDiagonal();
  const double cost = (p.array() * c.array()).sum();
  check_finite(cost, "sinkhorn scaling cost");
  return cost;
}

// averaging the two update orders makes the value exactly swap-symmetric
double ot_cost(const Mat& c, const SinkhornConfig& cfg) {
  if (cfg.log_domain)
    return 0.5 * (ot_log(c, cfg.eps, cfg.iters, true) + ot_log(c, cfg.eps, cfg.iters, false));
  return 0.5 * (ot_scaling(c, cfg.eps, cfg.iters, true) + ot_scaling(c, cfg.eps, cfg.iters, false));
}

}  // namespace

double w2_1d(const SampleCloud& a, const SampleCloud& b) {
  check_cloud(a, "w2_1d");
  check_cloud(b, "w2_1d");
  require(a.d() == 1 && b.d() == 1, "w2_1d: clouds must be one-dimensional");
  require(a.n() == b.n(), "w2_1d: sample counts must match");
  return w2_1d_cols(a.points.col(0), b.points.col(0));
}

double w2_marginal_sum(const SampleCloud& a, const SampleCloud& b) {
  check_cloud(a, "w2_marginal_sum");
  check_cloud(b, "w2_marginal_sum");
  require(a.d() == b.d(), "w2_marginal_sum: dimension mismatch");
  require(a.n() == b.n(), "w2_marginal_sum: sample counts must match");
  double acc = 0.0;
  for (int j = 0; j < a.d(); ++j) acc += w2_1d_cols(a.points.col(j), b.points.col(j));
  return acc;
}

double sinkhorn_divergence(const SampleCloud& a, const SampleCloud& b,
                           const SinkhornConfig& cfg) {
  check_cloud(a, "sinkhorn");
  check_cloud(b, "sinkhorn");
  require(a.d() == b.d(), "sinkhorn: dimension mismatch");
  require(cfg.eps > 0.0, "sinkhorn: eps must be positive");
  require(cfg.iters >= 1, "sinkhorn: iteration count must be >= 1");
  const double ab = ot_cost(sq_cost(a.points, b.points), cfg);
  if (!cfg.debiased) return ab;
  const double aa = ot_cost(sq_cost(a.points, a.points), cfg);
  const double bb = ot_cost(sq_cost(b.points, b.points), cfg);
  return std::max(0.0, ab - 0.5 * aa - 0.5 * bb);
}

TV tape_w2_1d(Tape& tp, const std::vector<TV>& a, const std::vector<TV>& b) {
  require(!a.empty(), "tape_w2_1d: empty cloud");
  require(a.size() == b.size(), "tape_w2_1d: sample counts must match");
  const int n = int(a.size());
  Vec va(n), vb(n);
  for (int i = 0; i < n; ++i) {
    va[i] = a[i].val();
    vb[i] = b[i].val();
  }
  const std::vector<int> ia = sort_order(va), ib = sort_order(vb);
  std::vector<Var> sq(n);
  for (int i = 0; i < n; ++i) {
    const TV diff = a[std::size_t(ia[i])] - b[std::size_t(ib[i])];
    sq[std::size_t(i)] = tp.sq(diff.v);
  }
  return tsqrt(TV{&tp, tp.mean(sq)});
}

TV tape_w2_marginal_sum(Tape& tp, const std::vector<TV>& a,
                        const std::vector<TV>& b, int n, int d) {
  require(n >= 1 && d >= 1, "tape_w2_marginal_sum: bad shape");
  require(int(a.size()) == n * d && int(b.size()) == n * d,
          "tape_w2_marginal_sum: cloud size does not match n*d");
  TV total{&tp, kNoVar};
  std::vector<TV> ca(static_cast<std::size_t>(n));
  std::vector<TV> cb(static_cast<std::size_t>(n));
  for (int j = 0; j < d; ++j) {
    for (int i = 0; i < n; ++i) {
      ca[std::size_t(i)] = a[std::size_t(i * d + j)];
      cb[std::size_t(i)] = b[std::size_t(i * d + j)];
    }
    const TV w = tape_w2_1d(tp, ca, cb);
    total = (j == 0) ? w : total + w;
  }
  return total;
}

namespace {

// log-sum-exp of tape terms with the numeric max as a constant shift; the
// shift choice does not perturb the gradient
TV tape_lse(Tape& tp, const std::vector<TV>& terms) {
  double m = -std::numeric_limits<double>::infinity();
  for (const TV& t : terms) m = std::max(m, t.val());
  TV s = texp(terms[0] - m);
  for (std::size_t i = 1; i < terms.size(); ++i) s = s + texp(terms[i] - m);
  return tlog(s) + m;
}

TV tape_ot(Tape& tp, const std::vector<TV>& c, int na, int nb, double eps,
           int iters, bool f_first) {
  const double loga = -std::log(double(na)), logb = -std::log(double(nb));
  const double inv_eps = 1.0 / eps;
  std::vector<TV> f(std::size_t(na), TV{&tp, tp.leaf(0.0)});
  std::vector<TV> g(std::size_t(nb), TV{&tp, tp.leaf(0.0)});
  std::vector<TV> terms;
  auto update_f = [&] {
    for (int i = 0; i < na; ++i) {
      terms.clear();
      for (int j = 0; j < nb; ++j)
        terms.push_back((g[std::size_t(j)] - c[std::size_t(i * nb + j)]) * inv_eps + logb);
      f[std::size_t(i)] = tape_lse(tp, terms) * (-eps);
    }
  };
  auto update_g = [&] {
    for (int j = 0; j < nb; ++j) {
      terms.clear();
      for (int i = 0; i < na; ++i)
        terms.push_back((f[std::size_t(i)] - c[std::size_t(i * nb + j)]) * inv_eps + loga);
      g[std::size_t(j)] = tape_lse(tp, terms) * (-eps);
    }
  };
  for (int k = 0; k < iters; ++k) {
    if (f_first) {
      update_f();
      update_g();
    } else {
      update_g();
      update_f();
    }
  }
  TV total{&tp, kNoVar};
  for (int i = 0; i < na; ++i)
    for (int j = 0; j < nb; ++j) {
      const TV& cij = c[std::size_t(i * nb + j)];
      const TV logp = (f[std::size_t(i)] + g[std::size_t(j)] - cij) * inv_eps + (loga + logb);
      const TV term = texp(logp) * cij;
      total = (i == 0 && j == 0) ? term : total + term;
    }
  return total;
}

std::vector<TV> tape_sq_cost(Tape& tp, const std::vector<TV>& a,
                             const std::vector<TV>& b, int na, int nb, int d) {
  std::vector<TV> c(static_cast<std::size_t>(na * nb));
  for (int i = 0; i < na; ++i)
    for (int j = 0; j < nb; ++j) {
      TV acc{&tp, kNoVar};
      for (int k = 0; k < d; ++k) {
        const TV t = tsq(a[std::size_t(i * d + k)] - b[std::size_t(j * d + k)]);
        acc = (k == 0) ? t : acc + t;
      }
      c[std::size_t(i * nb + j)] = acc;
    }
  return c;
}

TV tape_ot_avg(Tape& tp, const std::vector<TV>& a, const std::vector<TV>& b,
               int na, int nb, int d, const SinkhornConfig& cfg) {
  const std::vector<TV> c = tape_sq_cost(tp, a, b, na, nb, d);
  return (tape_ot(tp, c, na, nb, cfg.eps, cfg.iters, true) +
          tape_ot(tp, c, na, nb, cfg.eps, cfg.iters, false)) *
         0.5;
}

}  // namespace

TV tape_sinkhorn(Tape& tp, const std::vector<TV>& a, const std::vector<TV>& b,
                 int na, int nb, int d, const SinkhornConfig& cfg) {
  require(na >= 1 && nb >= 1 && d >= 1, "tape_sinkhorn: bad shape");
  require(int(a.size()) == na * d && int(b.size()) == nb * d,
          "tape_sinkhorn: cloud size does not match count*d");
  require(cfg.eps > 0.0, "tape_sinkhorn: eps must be positive");
  require(cfg.iters >= 1, "tape_sinkhorn: iteration count must be >= 1");
  require(cfg.log_domain, "tape_sinkhorn: only log_domain mode is differentiable");
  const TV ab = tape_ot_avg(tp, a, b, na, nb, d, cfg);
  if (!cfg.debiased) return ab;
  // kept unclamped so gradients survive near zero
  const TV aa = tape_ot_avg(tp, a, a, na, na, d, cfg);
  const TV bb = tape_ot_avg(tp, b, b, nb, nb, d, cfg);
  return ab - (aa + bb) * 0.5;
}

}  // namespace fkee

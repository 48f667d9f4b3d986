#include "fkee/fkpde.hpp"

#include <cmath>

#include "fkee/adam.hpp"

namespace fkee {

double pde_residual(const Jet& jet, const Vec& b, const Vec& sig_info, bool diagonal) {
  const int d = int(jet.grad_x.size());
  require(int(b.size()) == d, "pde_residual: drift dimension mismatch");
  double r = jet.dt;
  for (int i = 0; i < d; ++i) r += jet.grad_x[i] * b[i];
  if (diagonal) {
    require(jet.mode == HessMode::diagonal, "pde_residual: jet/mode mismatch");
    require(int(sig_info.size()) == d, "pde_residual: diagonal sigma size mismatch");
    for (int i = 0; i < d; ++i)
      r += 0.5 * sig_info[i] * sig_info[i] * jet.hess_diag[i];
  } else {
    require(jet.mode == HessMode::full, "pde_residual: jet/mode mismatch");
    require(int(sig_info.size()) == d * d, "pde_residual: full sigma size mismatch");
    const Eigen::Map<const Mat> sig(sig_info.data(), d, d);
    const Mat a = sig * sig.transpose();
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) r += 0.5 * a(i, j) * jet.hess(i, j);
  }
  return r;
}

double pde_residual(const MLP& u, const CollocPoint& pt, bool diagonal) {
  const Jet jet = eval_with_jet(u, pt.x, pt.t,
                                diagonal ? HessMode::diagonal : HessMode::full);
  return pde_residual(jet, pt.b, pt.sig, diagonal);
}

namespace {

Mat interior_inputs(const CollocationSet& colloc) {
  const int d = colloc.d, B = int(colloc.interior.size());
  Mat X(d + 1, B);
  for (int j = 0; j < B; ++j) {
    X.col(j).head(d) = colloc.interior[std::size_t(j)].x;
    X(d, j) = colloc.interior[std::size_t(j)].t;
  }
  return X;
}

Mat boundary_inputs(const BoundarySet& boundary, double T) {
  const int d = boundary.d(), B = boundary.n();
  Mat X(d + 1, B);
  for (int j = 0; j < B; ++j) {
    X.col(j).head(d) = boundary.x.row(j).transpose();
    X(d, j) = T;
  }
  return X;
}

// per-point weights of the curvature channels: 0.5*a_ii on the diagonal
// pairs, a_ab (a < b, symmetric double count folded in) off the diagonal
Mat curvature_weights(const CollocationSet& colloc, const JetVars& jv) {
  const int B = int(colloc.interior.size());
  Mat w(jv.n_curv, B);
  for (int j = 0; j < B; ++j) {
    const CollocPoint& pt = colloc.interior[std::size_t(j)];
    if (colloc.diagonal) {
      for (int c = 0; c < jv.n_curv; ++c) {
        const double s = pt.sig[c];
        w(c, j) = 0.5 * s * s;
      }
    } else {
      const Eigen::Map<const Mat> sig(pt.sig.data(), colloc.d, colloc.d);
      const Mat a = sig * sig.transpose();
      for (int c = 0; c < jv.n_curv; ++c) {
        const int al = jv.alpha[std::size_t(c)], be = jv.beta[std::size_t(c)];
        w(c, j) = (al == be) ? 0.5 * a(al, al) : a(al, be);
      }
    }
  }
  return w;
}

}  // namespace

double boundary_loss(const MLP& u, const BoundarySet& boundary) {
  require(boundary.n() >= 1, "boundary_loss: empty boundary set");
  require(boundary.f.size() == boundary.x.rows(), "boundary_loss: x/f length mismatch");
  require(boundary.f.allFinite(), "boundary_loss: f values must be finite");
  require(u.spec().output_dim == 1 && u.spec().input_dim == boundary.d() + 1,
          "boundary_loss: net shape mismatch");
  const Mat Y = u.forward(boundary_inputs(boundary, boundary.T));
  double acc = 0.0;
  for (int j = 0; j < boundary.n(); ++j) {
    const double diff = Y(0, j) - boundary.f[j];
    acc += diff * diff;
  }
  return acc / double(boundary.n());
}

double residual_loss(const MLP& u, const CollocationSet& colloc) {
  require(!colloc.interior.empty(), "residual_loss: no interior collocation points");
  double acc = 0.0;
  for (const CollocPoint& pt : colloc.interior) {
    const double r = pde_residual(u, pt, colloc.diagonal);
    acc += r * r;
  }
  return acc / double(colloc.interior.size());
}

std::pair<MLP, FitReport> solve(MLP u, const CollocationSet& colloc,
                                const BoundarySet& boundary, const LossWeights& w,
                                const SolveConfig& cfg) {
  require(w.lambda1 > 0 && w.lambda2 > 0, "solve: loss weights must be positive");
  require(cfg.epochs >= 0, "solve: epochs must be >= 0");
  require(cfg.lr > 0, "solve: learning rate must be positive");
  require(!colloc.interior.empty(), "solve: no interior collocation points");
  require(boundary.n() >= 1, "solve: empty boundary set");
  require(u.spec().output_dim == 1, "solve: solution net must have one output");
  require(u.spec().input_dim == colloc.d + 1, "solve: net input must be d+1");
  require(boundary.d() == colloc.d, "solve: boundary dimension mismatch");
  require(boundary.f.allFinite(), "solve: boundary f values must be finite");

  require(std::abs(boundary.T - colloc.T) <= 1e-9 * std::max(1.0, std::abs(colloc.T)),
          "solve: boundary time differs from the collocation terminal time");

  const int B = int(colloc.interior.size());
  const Mat Xint = interior_inputs(colloc);
  const Mat Xbnd = boundary_inputs(boundary, colloc.T);
  const HessMode mode = colloc.diagonal ? HessMode::diagonal : HessMode::full;

  OptimizerState opt = OptimizerState::make(u.params().size(), cfg.lr);
  FitReport rep;

  auto epoch_loss = [&](bool with_grad, Vec* grad) {
    Tape tp;
    const int block = tp.add_param_block(u.params().size());
    const JetVars jv = tape_jet_call(tp, u, block, Xint, mode);
    const Mat cw = curvature_weights(colloc, jv);
    std::vector<Var> sq(static_cast<std::size_t>(B));
    for (int j = 0; j < B; ++j) {
      const CollocPoint& pt = colloc.interior[std::size_t(j)];
      TV r{&tp, jv.dt[std::size_t(j)]};
      for (int i = 0; i < colloc.d; ++i)
        r = r + TV{&tp, jv.gradx[std::size_t(i + colloc.d * j)]} * pt.b[i];
      for (int c = 0; c < jv.n_curv; ++c)
        r = r + TV{&tp, jv.curv[std::size_t(c + jv.n_curv * j)]} * cw(c, j);
      sq[std::size_t(j)] = tp.sq(r.v);
    }
    const TV pde1{&tp, tp.mean(sq)};

    const std::vector<Var> ub = tape_value_call(tp, u, block, Xbnd);
    std::vector<Var> bsq(static_cast<std::size_t>(boundary.n()));
    for (int j = 0; j < boundary.n(); ++j) {
      const TV diff = TV{&tp, ub[std::size_t(j)]} - boundary.f[j];
      bsq[std::size_t(j)] = tp.sq(diff.v);
    }
    const TV pde2{&tp, tp.mean(bsq)};

    const TV loss = pde1 * w.lambda1 + pde2 * w.lambda2;
    if (with_grad) {
      tp.backward(loss.v);
      *grad = tp.param_grad(block);
    }
    return loss.val();
  };

  for (int e = 0; e < cfg.epochs; ++e) {
    Vec grad;
    const double v = epoch_loss(true, &grad);
    if (!std::isfinite(v))
      throw NumericError("pde loss became non-finite at epoch " + std::to_string(e) +
                         " (last finite loss " +
                         (rep.trace.empty() ? std::string("none")
                                            : std::to_string(rep.trace.back())) +
                         ")");
    if (v < cfg.epsilon) {
      rep.final_loss = v;
      rep.epochs_run = e;
      rep.stop_reason = "threshold";
      return {std::move(u), std::move(rep)};
    }
    adam_step(opt, u.params(), grad);
    rep.trace.push_back(v);
  }
  rep.epochs_run = int(rep.trace.size());
  rep.stop_reason = "budget";
  rep.final_loss = epoch_loss(false, nullptr);
  return {std::move(u), std::move(rep)};
}

double estimate_expectation(const MLP& u, const Vec& x0, double t0) {
  require(u.spec().output_dim == 1, "estimate_expectation: net must have one output");
  require(int(x0.size()) + 1 == u.spec().input_dim,
          "estimate_expectation: x0 dimension mismatch");
  Mat X(x0.size() + 1, 1);
  X.col(0).head(x0.size()) = x0;
  X(x0.size(), 0) = t0;
  return u.forward(X)(0, 0);
}

BoundarySet boundary_from_collocation(const CollocationSet& colloc,
                                      const std::function<double(const Vec&)>& f) {
  require(!colloc.terminal.empty(), "boundary_from_collocation: no terminal points");
  BoundarySet b;
  b.T = colloc.T;
  b.x.resize(int(colloc.terminal.size()), colloc.d);
  b.f.resize(int(colloc.terminal.size()));
  for (std::size_t j = 0; j < colloc.terminal.size(); ++j) {
    b.x.row(Eigen::Index(j)) = colloc.terminal[j].x.transpose();
    b.f[Eigen::Index(j)] = f(colloc.terminal[j].x);
  }
  return b;
}

MLPSpec default_solution_spec(int d) {
  require(d >= 1, "default_solution_spec: d must be >= 1");
  const int width = d <= 10 ? 108 : 526;
  return MLPSpec{d + 1, {width, width}, 1};
}

}  // namespace fkee

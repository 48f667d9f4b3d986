#include "fkee/mlp.hpp"

#include "fkee/rng.hpp"

namespace fkee {

void validate(const MLPSpec& spec) {
  require(spec.input_dim >= 1, "MLPSpec: input_dim must be >= 1");
  require(spec.output_dim >= 1, "MLPSpec: output_dim must be >= 1");
  require(!spec.hidden.empty(), "MLPSpec: at least one hidden layer");
  for (int w : spec.hidden) require(w >= 1, "MLPSpec: hidden width must be >= 1");
}

std::size_t param_count(const MLPSpec& spec) {
  std::size_t n = 0;
  int prev = spec.input_dim;
  for (int w : spec.hidden) {
    n += std::size_t(w) * std::size_t(prev) + std::size_t(w);
    prev = w;
  }
  n += std::size_t(spec.output_dim) * std::size_t(prev) + std::size_t(spec.output_dim);
  return n;
}

Vec init_params(const MLPSpec& spec, std::uint64_t seed) {
  validate(spec);
  Rng rng(seed);
  Vec p = Vec::Zero(Eigen::Index(param_count(spec)));
  Eigen::Index off = 0;
  int prev = spec.input_dim;
  auto layer = [&](int rows, int cols) {
    const double a = 1.0 / std::sqrt(double(cols));
    for (Eigen::Index i = 0; i < Eigen::Index(rows) * cols; ++i)
      p[off + i] = rng.uniform(-a, a);
    off += Eigen::Index(rows) * cols + rows;  // biases stay zero
  };
  for (int w : spec.hidden) {
    layer(w, prev);
    prev = w;
  }
  layer(spec.output_dim, prev);
  return p;
}

MLP::MLP(MLPSpec s, Vec p) : spec_(std::move(s)), params_(std::move(p)) {
  validate(spec_);
  require(std::size_t(params_.size()) == param_count(spec_),
          "MLP: parameter vector length mismatch");
  widths_.push_back(spec_.input_dim);
  for (int w : spec_.hidden) widths_.push_back(w);
  widths_.push_back(spec_.output_dim);
  Eigen::Index off = 0;
  for (std::size_t m = 0; m + 1 < widths_.size(); ++m) {
    w_off_.push_back(off);
    off += Eigen::Index(widths_[m + 1]) * widths_[m];
    b_off_.push_back(off);
    off += widths_[m + 1];
  }
}

MLP MLP::seeded(MLPSpec s, std::uint64_t seed) {
  Vec p = init_params(s, seed);
  return MLP(std::move(s), std::move(p));
}

Mat MLP::forward(const Mat& X) const {
  require(int(X.rows()) == spec_.input_dim, "MLP::forward: input dim mismatch");
  Mat A = X;
  for (int m = 0; m < maps() - 1; ++m) {
    Mat Z = W(m) * A;
    Z.colwise() += b(m);
    A = Z.array().tanh();
  }
  Mat Y = W(maps() - 1) * A;
  Y.colwise() += b(maps() - 1);
  return Y;
}

JetEval::JetEval(const MLP* net, HessMode mode, bool with_tangents)
    : net_(net), mode_(mode) {
  dims_ = net->spec().input_dim - 1;  // spatial inputs, t excluded
  n_tan_ = with_tangents ? net->spec().input_dim : 0;
  if (mode == HessMode::diagonal) {
    for (int i = 0; i < dims_; ++i) {
      alpha_.push_back(i);
      beta_.push_back(i);
    }
  } else if (mode == HessMode::full) {
    for (int i = 0; i < dims_; ++i)
      for (int j = i; j < dims_; ++j) {
        alpha_.push_back(i);
        beta_.push_back(j);
      }
  }
  n_curv_ = int(alpha_.size());
  require(mode == HessMode::none || with_tangents,
          "JetEval: curvature requires tangents");
  n_ch_ = 1 + n_tan_ + n_curv_;
}

void JetEval::forward(const Mat& X) {
  const int n0 = net_->spec().input_dim;
  require(int(X.rows()) == n0, "JetEval: input dim mismatch");
  B_ = int(X.cols());
  const int M = net_->maps();
  A_.assign(std::size_t(M), Mat());
  Z_.assign(std::size_t(M - 1), Mat());

  Mat& A0 = A_[0];
  A0 = Mat::Zero(n0, Eigen::Index(B_) * n_ch_);
  A0.leftCols(B_) = X;
  for (int k = 0; k < n_tan_; ++k)
    A0.row(k).segment(Eigen::Index(1 + k) * B_, B_).setOnes();

  for (int m = 0; m < M - 1; ++m) {
    Mat& Z = Z_[std::size_t(m)];
    Z.noalias() = net_->W(m) * A_[std::size_t(m)];
    Z.leftCols(B_).colwise() += net_->b(m);

    Mat& A = A_[std::size_t(m + 1)];
    A.resize(Z.rows(), Z.cols());
    A.leftCols(B_).array() = Z.leftCols(B_).array().tanh();
    const Eigen::ArrayXXd s = A.leftCols(B_).array();
    const Eigen::ArrayXXd p = 1.0 - s.square();
    for (int k = 0; k < n_tan_; ++k) {
      const Eigen::Index c0 = Eigen::Index(1 + k) * B_;
      A.middleCols(c0, B_).array() = p * Z.middleCols(c0, B_).array();
    }
    if (n_curv_ > 0) {
      const Eigen::ArrayXXd q = -2.0 * s * p;
      for (int c = 0; c < n_curv_; ++c) {
        const Eigen::Index ca = Eigen::Index(1 + alpha_[std::size_t(c)]) * B_;
        const Eigen::Index cb = Eigen::Index(1 + beta_[std::size_t(c)]) * B_;
        const Eigen::Index cc = Eigen::Index(1 + n_tan_ + c) * B_;
        A.middleCols(cc, B_).array() =
            q * Z.middleCols(ca, B_).array() * Z.middleCols(cb, B_).array() +
            p * Z.middleCols(cc, B_).array();
      }
    }
  }

  Y_.noalias() = net_->W(M - 1) * A_[std::size_t(M - 1)];
  Y_.leftCols(B_).colwise() += net_->b(M - 1);
  Ybar_ = Mat::Zero(Y_.rows(), Y_.cols());
}

void JetEval::backward(bool want_input_adjoint) {
  const int M = net_->maps();
  gW_.assign(std::size_t(M), Mat());
  gb_.assign(std::size_t(M), Vec());

  gW_[std::size_t(M - 1)].noalias() = Ybar_ * A_[std::size_t(M - 1)].transpose();
  gb_[std::size_t(M - 1)] = Ybar_.leftCols(B_).rowwise().sum();
  Mat Abar = net_->W(M - 1).transpose() * Ybar_;

  for (int m = M - 2; m >= 0; --m) {
    const Mat& Z = Z_[std::size_t(m)];
    const Mat& A = A_[std::size_t(m + 1)];
    const Eigen::ArrayXXd s = A.leftCols(B_).array();
    const Eigen::ArrayXXd p = 1.0 - s.square();

    Mat Zbar(Z.rows(), Z.cols());
    // sbar collects dL/ds through p = 1-s^2 and q = -2s+2s^3
    Eigen::ArrayXXd sbar = Abar.leftCols(B_).array();
    if (n_tan_ > 0) {
      Eigen::ArrayXXd pbar = Eigen::ArrayXXd::Zero(Z.rows(), B_);
      for (int k = 0; k < n_tan_; ++k) {
        const Eigen::Index c0 = Eigen::Index(1 + k) * B_;
        pbar += Z.middleCols(c0, B_).array() * Abar.middleCols(c0, B_).array();
        Zbar.middleCols(c0, B_).array() = p * Abar.middleCols(c0, B_).array();
      }
      if (n_curv_ > 0) {
        const Eigen::ArrayXXd q = -2.0 * s * p;
        Eigen::ArrayXXd qbar = Eigen::ArrayXXd::Zero(Z.rows(), B_);
        for (int c = 0; c < n_curv_; ++c) {
          const Eigen::Index ca = Eigen::Index(1 + alpha_[std::size_t(c)]) * B_;
          const Eigen::Index cb = Eigen::Index(1 + beta_[std::size_t(c)]) * B_;
          const Eigen::Index cc = Eigen::Index(1 + n_tan_ + c) * B_;
          const Eigen::ArrayXXd abar_c = Abar.middleCols(cc, B_).array();
          qbar += Z.middleCols(ca, B_).array() * Z.middleCols(cb, B_).array() * abar_c;
          pbar += Z.middleCols(cc, B_).array() * abar_c;
          Zbar.middleCols(ca, B_).array() += q * Z.middleCols(cb, B_).array() * abar_c;
          Zbar.middleCols(cb, B_).array() += q * Z.middleCols(ca, B_).array() * abar_c;
          Zbar.middleCols(cc, B_).array() = p * abar_c;
        }
        sbar += (6.0 * s.square() - 2.0) * qbar;
      }
      sbar += -2.0 * s * pbar;
    }
    Zbar.leftCols(B_).array() = p * sbar;

    gW_[std::size_t(m)].noalias() = Zbar * A_[std::size_t(m)].transpose();
    gb_[std::size_t(m)] = Zbar.leftCols(B_).rowwise().sum();
    if (m > 0 || want_input_adjoint)
      Abar.noalias() = net_->W(m).transpose() * Zbar;
  }
  if (want_input_adjoint) Abar0_ = Abar;
}

void JetEval::accumulate_grad(Vec& g) const {
  Eigen::Index off = 0;
  for (int m = 0; m < net_->maps(); ++m) {
    const Mat& gw = gW_[std::size_t(m)];
    g.segment(off, gw.size()) += Eigen::Map<const Vec>(gw.data(), gw.size());
    off += gw.size();
    g.segment(off, gb_[std::size_t(m)].size()) += gb_[std::size_t(m)];
    off += gb_[std::size_t(m)].size();
  }
}

namespace {

Jet jet_from_eval(const JetEval& ev, int d, HessMode mode) {
  Jet out;
  out.mode = mode;
  out.value = ev.value(0, 0);
  out.dt = ev.dt(0, 0);
  out.grad_x = Vec(d);
  for (int i = 0; i < d; ++i) out.grad_x[i] = ev.dx(0, i, 0);
  if (mode == HessMode::diagonal) {
    out.hess_diag = Vec(d);
    for (int c = 0; c < ev.n_curv(); ++c) out.hess_diag[ev.alpha(c)] = ev.curv(0, c, 0);
  } else if (mode == HessMode::full) {
    out.hess = Mat::Zero(d, d);
    for (int c = 0; c < ev.n_curv(); ++c) {
      const double v = ev.curv(0, c, 0);
      out.hess(ev.alpha(c), ev.beta(c)) = v;
      out.hess(ev.beta(c), ev.alpha(c)) = v;
    }
  }
  return out;
}

}  // namespace

Jet eval_with_jet(const MLP& net, const Vec& x, double t, HessMode mode) {
  const int d = net.spec().input_dim - 1;
  require(int(x.size()) == d, "eval_with_jet: x dimension mismatch with spec");
  require(net.spec().output_dim == 1, "eval_with_jet: jets need a scalar output");
  require(x.allFinite() && std::isfinite(t), "eval_with_jet: non-finite input");
  Mat X(d + 1, 1);
  X.col(0).head(d) = x;
  X(d, 0) = t;
  JetEval ev(&net, mode, true);
  ev.forward(X);
  return jet_from_eval(ev, d, mode);
}

Jet eval_with_jet(const MLPSpec& spec, const Vec& params, const Vec& x, double t,
                  HessMode mode) {
  MLP net(spec, params);
  return eval_with_jet(net, x, t, mode);
}

JetVars tape_jet_call(Tape& t, const MLP& net, int block, const Mat& X,
                      HessMode mode) {
  auto ev = std::make_shared<JetEval>(&net, mode, true);
  ev->forward(X);
  const int B = ev->batch();
  const int d = net.spec().input_dim - 1;
  require(net.spec().output_dim == 1, "tape_jet_call: jets need a scalar output");

  JetVars jv;
  jv.B = B;
  jv.d = d;
  jv.n_curv = ev->n_curv();
  for (int c = 0; c < jv.n_curv; ++c) {
    jv.alpha.push_back(ev->alpha(c));
    jv.beta.push_back(ev->beta(c));
  }
  jv.value.reserve(std::size_t(B));
  jv.dt.reserve(std::size_t(B));
  for (int j = 0; j < B; ++j) jv.value.push_back(t.leaf(ev->value(0, j)));
  for (int j = 0; j < B; ++j) jv.dt.push_back(t.leaf(ev->dt(0, j)));
  for (int j = 0; j < B; ++j)
    for (int i = 0; i < d; ++i) jv.gradx.push_back(t.leaf(ev->dx(0, i, j)));
  for (int j = 0; j < B; ++j)
    for (int c = 0; c < jv.n_curv; ++c) jv.curv.push_back(t.leaf(ev->curv(0, c, j)));

  JetVars out = jv;  // pullback keeps its own var indices
  t.push_marker([ev, jv, block, B, d](Tape& tp) {
    Mat& Yb = ev->ybar();
    const int ntan = d + 1;
    for (int j = 0; j < B; ++j) {
      Yb(0, j) = tp.adj(jv.value[std::size_t(j)]);
      Yb(0, Eigen::Index(1 + d) * B + j) = tp.adj(jv.dt[std::size_t(j)]);
      for (int i = 0; i < d; ++i)
        Yb(0, Eigen::Index(1 + i) * B + j) = tp.adj(jv.gradx[std::size_t(i + d * j)]);
      for (int c = 0; c < jv.n_curv; ++c)
        Yb(0, Eigen::Index(1 + ntan + c) * B + j) =
            tp.adj(jv.curv[std::size_t(c + jv.n_curv * j)]);
    }
    ev->backward(false);
    ev->accumulate_grad(tp.param_grad(block));
  });
  return out;
}

namespace {

std::vector<Var> value_call_impl(Tape& t, const MLP& net, int block, const Mat& X,
                                 const std::vector<Var>* xvars) {
  auto ev = std::make_shared<JetEval>(&net, HessMode::none, false);
  ev->forward(X);
  const int B = ev->batch();
  const int out = net.spec().output_dim;
  std::vector<Var> ys;
  ys.reserve(std::size_t(out) * B);
  for (int j = 0; j < B; ++j)
    for (int r = 0; r < out; ++r) ys.push_back(t.leaf(ev->value(r, j)));

  std::vector<Var> xv = xvars ? *xvars : std::vector<Var>{};
  const int n0 = net.spec().input_dim;
  t.push_marker([ev, ys, xv, block, B, out, n0](Tape& tp) {
    Mat& Yb = ev->ybar();
    for (int j = 0; j < B; ++j)
      for (int r = 0; r < out; ++r) Yb(r, j) = tp.adj(ys[std::size_t(r + out * j)]);
    ev->backward(!xv.empty());
    ev->accumulate_grad(tp.param_grad(block));
    if (!xv.empty()) {
      const Mat& Xb = ev->input_adjoint();
      for (int j = 0; j < B; ++j)
        for (int i = 0; i < n0; ++i)
          tp.add_adj(xv[std::size_t(i + n0 * j)], Xb(i, j));
    }
  });
  return ys;
}

}  // namespace

std::vector<Var> tape_value_call(Tape& t, const MLP& net, int block, const Mat& X) {
  return value_call_impl(t, net, block, X, nullptr);
}

std::vector<Var> tape_value_call(Tape& t, const MLP& net, int block,
                                 const std::vector<Var>& xvars, int B) {
  const int n0 = net.spec().input_dim;
  require(int(xvars.size()) == n0 * B, "tape_value_call: xvars size mismatch");
  Mat X(n0, B);
  for (int j = 0; j < B; ++j)
    for (int i = 0; i < n0; ++i) X(i, j) = t.val(xvars[std::size_t(i + n0 * j)]);
  return value_call_impl(t, net, block, X, &xvars);
}

}  // namespace fkee

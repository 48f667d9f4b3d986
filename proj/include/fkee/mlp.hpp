#ifndef FKEE_MLP_HPP
#define FKEE_MLP_HPP

#include <cstdint>
#include <memory>

#include "fkee/common.hpp"
#include "fkee/tape.hpp"

namespace fkee {

// tanh hidden layers, linear output; input is [x; t] with t as the last row
struct MLPSpec {
  int input_dim = 1;
  std::vector<int> hidden;
  int output_dim = 1;
  bool operator==(const MLPSpec&) const = default;
};

enum class HessMode { none, diagonal, full };

std::size_t param_count(const MLPSpec& spec);
void validate(const MLPSpec& spec);

// weights uniform in ±1/sqrt(fan_in), biases zero
Vec init_params(const MLPSpec& spec, std::uint64_t seed);

struct Jet {
  double value = 0.0;
  double dt = 0.0;
  Vec grad_x;     // d
  Vec hess_diag;  // d, diagonal mode
  Mat hess;       // d x d, full mode
  HessMode mode = HessMode::diagonal;
};

class MLP {
 public:
  MLP() = default;
  MLP(MLPSpec s, Vec p);
  static MLP seeded(MLPSpec s, std::uint64_t seed);

  const MLPSpec& spec() const { return spec_; }
  Vec& params() { return params_; }
  const Vec& params() const { return params_; }
  int maps() const { return int(widths_.size()) - 1; }  // linear maps
  int width(int i) const { return widths_[std::size_t(i)]; }

  Eigen::Map<const Mat> W(int m) const {
    return {params_.data() + w_off_[std::size_t(m)], widths_[std::size_t(m) + 1],
            widths_[std::size_t(m)]};
  }
  Eigen::Map<const Vec> b(int m) const {
    return {params_.data() + b_off_[std::size_t(m)], widths_[std::size_t(m) + 1]};
  }

  // value-only forward, X is input_dim x B
  Mat forward(const Mat& X) const;

 private:
  friend class JetEval;
  MLPSpec spec_;
  Vec params_;
  std::vector<Eigen::Index> w_off_, b_off_;
  std::vector<int> widths_;
};

// Batched propagation of (value, tangent, curvature) channels through a tanh
// MLP, with the matching adjoint sweep. Channels are stacked side by side in
// one width x (B * n_ch) matrix so every layer is a single GEMM:
//   block 0:            value
//   blocks 1..n_in:     d/dxi_k (all inputs, t last)
//   remaining blocks:   d^2/dxi_a dxi_b over the spatial inputs only
// tanh rules per unit, with s = tanh(z), p = 1 - s^2, q = -2 s p:
//   a_V = s;  a_D[k] = p z_D[k];  a_C = q z_D[alpha] z_D[beta] + p z_C
class JetEval {
 public:
  JetEval(const MLP* net, HessMode mode, bool with_tangents);

  void forward(const Mat& X);

  int batch() const { return B_; }
  int n_curv() const { return n_curv_; }
  int alpha(int c) const { return int(alpha_[std::size_t(c)]); }
  int beta(int c) const { return int(beta_[std::size_t(c)]); }

  double value(int out, int j) const { return Y_(out, j); }
  double dt(int out, int j) const { return Y_(out, (1 + dims_) * B_ + j); }
  double dx(int out, int i, int j) const { return Y_(out, (1 + i) * B_ + j); }
  double curv(int out, int c, int j) const {
    return Y_(out, (1 + n_tan_ + c) * B_ + j);
  }

  // adjoint of the stacked output; fill then call backward()
  Mat& ybar() { return Ybar_; }
  void backward(bool want_input_adjoint);
  const Mat& input_adjoint() const { return Abar0_; }  // stacked like the input
  void accumulate_grad(Vec& g) const;  // adds dL/dparams in MLP layout

 private:
  const MLP* net_;
  HessMode mode_;
  int B_ = 0, dims_ = 0, n_tan_ = 0, n_curv_ = 0, n_ch_ = 1;
  std::vector<int> alpha_, beta_;
  std::vector<Mat> A_;  // A_[0] input .. A_[M-1] last hidden activation
  std::vector<Mat> Z_;  // pre-activations of hidden layers
  Mat Y_, Ybar_, Abar0_;
  std::vector<Mat> gW_;
  std::vector<Vec> gb_;
};

// single-point convenience wrapper (output_dim must be 1)
Jet eval_with_jet(const MLP& net, const Vec& x, double t, HessMode mode);
Jet eval_with_jet(const MLPSpec& spec, const Vec& params, const Vec& x, double t,
                  HessMode mode);

// ---- tape bindings ----------------------------------------------------
// Batched MLP calls appear on the tape as custom nodes; parameter gradients
// accumulate into the given block, input adjoints flow back into input vars
// when the inputs are vars.

struct JetVars {
  int B = 0, d = 0, n_curv = 0;
  std::vector<Var> value;  // B
  std::vector<Var> dt;     // B
  std::vector<Var> gradx;  // i + d*j
  std::vector<Var> curv;   // c + n_curv*j
  std::vector<int> alpha, beta;
};

// constant collocation inputs, derivatives w.r.t. params only
JetVars tape_jet_call(Tape& t, const MLP& net, int block, const Mat& X,
                      HessMode mode);

// value-only call on constant inputs; returns out x B vars as r + out*j
std::vector<Var> tape_value_call(Tape& t, const MLP& net, int block, const Mat& X);

// value-only call on var inputs (xvars is i + input_dim*j); adjoints flow
// into both the param block and the input vars
std::vector<Var> tape_value_call(Tape& t, const MLP& net, int block,
                                 const std::vector<Var>& xvars, int B);

}  // namespace fkee

#endif

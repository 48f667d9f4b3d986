#ifndef FKEE_TAPE_HPP
#define FKEE_TAPE_HPP

#include <cstdint>
#include <functional>
#include <span>

#include "fkee/common.hpp"

namespace fkee {

using Var = std::int32_t;
constexpr Var kNoVar = -1;

// Scalar reverse-mode tape. Heavy batched work (MLP evaluation) enters the
// graph through custom multi-output nodes: the outputs are plain leaves and a
// marker node runs the batched pullback at the right point of the reverse
// sweep, scattering adjoints into input leaves and parameter-block gradients.
class Tape {
 public:
  Var leaf(double v) { return push(Op::leaf, kNoVar, kNoVar, v, 0.0, 0.0); }

  Var add(Var a, Var b) { return push(Op::node, a, b, val_[a] + val_[b], 1.0, 1.0); }
  Var sub(Var a, Var b) { return push(Op::node, a, b, val_[a] - val_[b], 1.0, -1.0); }
  Var mul(Var a, Var b) { return push(Op::node, a, b, val_[a] * val_[b], val_[b], val_[a]); }
  Var div(Var a, Var b) {
    const double inv = 1.0 / val_[b];
    return push(Op::node, a, b, val_[a] * inv, inv, -val_[a] * inv * inv);
  }
  Var add_const(Var a, double c) { return push(Op::node, a, kNoVar, val_[a] + c, 1.0, 0.0); }
  Var mul_const(Var a, double c) { return push(Op::node, a, kNoVar, val_[a] * c, c, 0.0); }
  Var neg(Var a) { return mul_const(a, -1.0); }
  Var exp_(Var a) {
    const double e = std::exp(val_[a]);
    return push(Op::node, a, kNoVar, e, e, 0.0);
  }
  Var log_(Var a) { return push(Op::node, a, kNoVar, std::log(val_[a]), 1.0 / val_[a], 0.0); }
  Var tanh_(Var a) {
    const double s = std::tanh(val_[a]);
    return push(Op::node, a, kNoVar, s, 1.0 - s * s, 0.0);
  }
  Var sqrt_(Var a) {
    const double r = std::sqrt(val_[a]);
    return push(Op::node, a, kNoVar, r, 0.5 / r, 0.0);
  }
  Var sq(Var a) { return push(Op::node, a, kNoVar, val_[a] * val_[a], 2.0 * val_[a], 0.0); }
  // softplus with the sub-gradient-free exact derivative sigmoid(x)
  Var softplus(Var a) {
    const double x = val_[a];
    const double v = x > 30.0 ? x : std::log1p(std::exp(x));
    const double s = 1.0 / (1.0 + std::exp(-x));
    return push(Op::node, a, kNoVar, v, s, 0.0);
  }
  // max with ties toward the first argument (consistent sub-gradient)
  Var max2(Var a, Var b) {
    const bool first = val_[a] >= val_[b];
    return push(Op::node, a, b, first ? val_[a] : val_[b], first ? 1.0 : 0.0,
                first ? 0.0 : 1.0);
  }

  Var sum(std::span<const Var> xs) {
    require(!xs.empty(), "tape sum over empty span");
    Var acc = xs[0];
    for (std::size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
    return acc;
  }
  Var mean(std::span<const Var> xs) { return mul_const(sum(xs), 1.0 / double(xs.size())); }

  double val(Var v) const { return val_[v]; }
  double adj(Var v) const { return adj_[v]; }
  void add_adj(Var v, double g) { adj_[v] += g; }

  // parameter-block gradient sinks for batched pullbacks
  int add_param_block(Eigen::Index n) {
    grads_.emplace_back(Vec::Zero(n));
    return int(grads_.size()) - 1;
  }
  Vec& param_grad(int block) { return grads_[block]; }

  void push_marker(std::function<void(Tape&)> pull) {
    pulls_.push_back(std::move(pull));
    push(Op::marker, Var(pulls_.size() - 1), kNoVar, 0.0, 0.0, 0.0);
  }

  // reverse sweep from the given scalar
  void backward(Var loss);

  void reset() {
    val_.clear();
    adj_.clear();
    meta_.clear();
    pulls_.clear();
    grads_.clear();
  }

  std::size_t size() const { return val_.size(); }

 private:
  enum class Op : std::uint8_t { leaf, node, marker };
  struct Node {
    Op op;
    Var a, b;
    double pa, pb;
  };

  Var push(Op op, Var a, Var b, double v, double pa, double pb) {
    val_.push_back(v);
    meta_.push_back(Node{op, a, b, pa, pb});
    return Var(val_.size()) - 1;
  }

  std::vector<double> val_, adj_;
  std::vector<Node> meta_;
  std::vector<std::function<void(Tape&)>> pulls_;
  std::vector<Vec> grads_;
};

// thin value wrapper so loss assembly reads like arithmetic
struct TV {
  Tape* t = nullptr;
  Var v = kNoVar;
  double val() const { return t->val(v); }
};

inline TV operator+(TV a, TV b) { return {a.t, a.t->add(a.v, b.v)}; }
inline TV operator-(TV a, TV b) { return {a.t, a.t->sub(a.v, b.v)}; }
inline TV operator*(TV a, TV b) { return {a.t, a.t->mul(a.v, b.v)}; }
inline TV operator/(TV a, TV b) { return {a.t, a.t->div(a.v, b.v)}; }
inline TV operator+(TV a, double c) { return {a.t, a.t->add_const(a.v, c)}; }
inline TV operator+(double c, TV a) { return a + c; }
inline TV operator-(TV a, double c) { return {a.t, a.t->add_const(a.v, -c)}; }
inline TV operator-(double c, TV a) { return {a.t, a.t->add_const(a.t->neg(a.v), c)}; }
inline TV operator*(TV a, double c) { return {a.t, a.t->mul_const(a.v, c)}; }
inline TV operator*(double c, TV a) { return a * c; }
inline TV operator/(TV a, double c) { return a * (1.0 / c); }
inline TV operator/(double c, TV a) { return {a.t, a.t->div(a.t->leaf(c), a.v)}; }
inline TV operator-(TV a) { return {a.t, a.t->neg(a.v)}; }
inline TV texp(TV a) { return {a.t, a.t->exp_(a.v)}; }
inline TV tlog(TV a) { return {a.t, a.t->log_(a.v)}; }
inline TV tsqrt(TV a) { return {a.t, a.t->sqrt_(a.v)}; }
inline TV tsq(TV a) { return {a.t, a.t->sq(a.v)}; }

}  // namespace fkee

#endif

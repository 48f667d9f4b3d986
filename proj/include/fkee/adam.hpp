#ifndef FKEE_ADAM_HPP
#define FKEE_ADAM_HPP

#include "fkee/common.hpp"

namespace fkee {

struct OptimizerState {
  Vec m, v;  // first and second moments
  long step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static OptimizerState make(Eigen::Index n, double lr = 1e-3) {
    OptimizerState s;
    s.m = Vec::Zero(n);
    s.v = Vec::Zero(n);
    s.lr = lr;
    return s;
  }
};

// standard Adam with bias correction, in place
inline void adam_step(OptimizerState& st, Vec& params, const Vec& grad) {
  require(st.m.size() == params.size() && grad.size() == params.size(),
          "adam_step: shape mismatch");
  st.step += 1;
  st.m = st.beta1 * st.m + (1.0 - st.beta1) * grad;
  st.v.array() = st.beta2 * st.v.array() + (1.0 - st.beta2) * grad.array().square();
  const double bc1 = 1.0 - std::pow(st.beta1, double(st.step));
  const double bc2 = 1.0 - std::pow(st.beta2, double(st.step));
  params.array() -=
      st.lr * (st.m.array() / bc1) / ((st.v.array() / bc2).sqrt() + st.eps);
}

// pure variant matching the functional signature used by the tests
inline std::pair<Vec, OptimizerState> adam_update(const OptimizerState& st,
                                                  const Vec& params, const Vec& grad) {
  OptimizerState s = st;
  Vec p = params;
  adam_step(s, p, grad);
  return {std::move(p), std::move(s)};
}

}  // namespace fkee

#endif

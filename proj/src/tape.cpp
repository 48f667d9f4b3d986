#include "fkee/tape.hpp"

namespace fkee {

void Tape::backward(Var loss) {
  check_finite(val_[loss], "loss");
  adj_.assign(val_.size(), 0.0);
  adj_[loss] = 1.0;
  for (std::int64_t i = std::int64_t(val_.size()) - 1; i >= 0; --i) {
    const Node& n = meta_[std::size_t(i)];
    if (n.op == Op::marker) {
      pulls_[std::size_t(n.a)](*this);
    } else if (n.op == Op::node) {
      const double g = adj_[std::size_t(i)];
      if (g == 0.0) continue;
      adj_[std::size_t(n.a)] += n.pa * g;
      if (n.b != kNoVar) adj_[std::size_t(n.b)] += n.pb * g;
    }
  }
}

}  // namespace fkee

#include "ciper/objectives.hpp"

namespace ciper {

LossReport combined_loss(double l_c, double l_p, double alpha, double tau) {
  if (!(alpha >= 0.0)) throw PreconditionError("combined_loss: alpha must be non-negative");
  LossReport r;
  r.l_c = l_c;
  r.l_p = l_p;
  r.alpha = alpha;
  r.tau = tau;
  r.total = l_c + alpha * l_p;
  return r;
}

}  // namespace ciper

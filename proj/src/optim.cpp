#include "ciper/optim.hpp"

#include "ciper/scene.hpp"

namespace ciper {

double cosine_lr(std::int64_t step, std::int64_t total_steps, double base_lr) {
  if (total_steps <= 0) throw PreconditionError("cosine_lr: total_steps must be positive");
  if (step < 0 || step > total_steps) throw PreconditionError("cosine_lr: step outside [0, total_steps]");
  if (step == total_steps) return 0.0;
  return base_lr * 0.5 * (1.0 + std::cos(kPi * static_cast<double>(step) / static_cast<double>(total_steps)));
}

double step_decay_lr(int epoch, double base_lr, double factor, int every) {
  if (every <= 0 || factor <= 0.0) throw PreconditionError("step_decay_lr: invalid schedule");
  return base_lr / std::pow(factor, epoch / every);
}

}  // namespace ciper

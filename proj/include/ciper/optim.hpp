#pragma once

#include "ciper/nn.hpp"

#include <cmath>
#include <map>
#include <span>
#include <string>

namespace ciper {

/// Half-cosine decay from base_lr at step 0 to 0 at total_steps.
double cosine_lr(std::int64_t step, std::int64_t total_steps, double base_lr);

/// Initial lr divided by `factor` every `every` epochs.
double step_decay_lr(int epoch, double base_lr, double factor, int every);

struct SgdOptions {
  double momentum = 0.9;
  double weight_decay = 5e-4;
  bool nesterov = false;
};

/// SGD with (optionally Nesterov) momentum and L2 weight decay; PyTorch update rule.
template <typename Scalar>
class Sgd {
 public:
  explicit Sgd(SgdOptions options = {}) : options_(options) {}

  void step(std::span<nn::Param<Scalar>* const> params, double lr) {
    const auto mom = static_cast<Scalar>(options_.momentum);
    const auto wd = static_cast<Scalar>(options_.weight_decay);
    const auto rate = static_cast<Scalar>(lr);
    for (nn::Param<Scalar>* p : params) {
      Matrix<Scalar> d = p->grad;
      if (wd != Scalar(0)) d += wd * p->value;
      if (mom != Scalar(0)) {
        auto it = buffers_.find(p->name);
        if (it == buffers_.end()) {
          it = buffers_.emplace(p->name, d).first;
        } else {
          it->second = mom * it->second + d;
        }
        if (options_.nesterov) {
          d += mom * it->second;
        } else {
          d = it->second;
        }
      }
      p->value -= rate * d;
    }
  }

  const SgdOptions& options() const { return options_; }
  std::map<std::string, Matrix<Scalar>>& momentum_buffers() { return buffers_; }
  const std::map<std::string, Matrix<Scalar>>& momentum_buffers() const { return buffers_; }

 private:
  SgdOptions options_;
  std::map<std::string, Matrix<Scalar>> buffers_;
};

}  // namespace ciper

#pragma once

#include <cstdint>
#include <vector>

#include "qareid/layers.hpp"

namespace qareid {

struct AdamConfig {
  double lr = 3.5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Step-decayed learning rate: base * gamma^floor(epoch / step).
double lr_at_epoch(double base_lr, int epoch, int step = 40, double gamma = 0.1);

class Adam {
 public:
  Adam(std::vector<Param*> params, const AdamConfig& cfg);

  // One update using the gradients currently held by the parameters; lr
  // overrides the configured base rate so schedules stay outside.
  void step(double lr);
  void zero_grad();

  int64_t t() const { return t_; }
  void set_t(int64_t t) { t_ = t; }

  // Moment estimates, named adam.m.<param> / adam.v.<param>.
  std::vector<NamedTensor> state();

 private:
  std::vector<Param*> params_;
  std::vector<Tensor> m_, v_;
  std::vector<std::string> m_names_, v_names_;
  AdamConfig cfg_;
  int64_t t_ = 0;
};

}  // namespace qareid

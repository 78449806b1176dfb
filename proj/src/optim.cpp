#include "qareid/optim.hpp"

#include <omp.h>

#include <cmath>

namespace qareid {

double lr_at_epoch(double base_lr, int epoch, int step, double gamma) {
  return base_lr * std::pow(gamma, epoch / step);
}

Adam::Adam(std::vector<Param*> params, const AdamConfig& cfg)
    : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Param* p : params_) {
    m_.push_back(Tensor::zeros(p->value.shape()));
    v_.push_back(Tensor::zeros(p->value.shape()));
    m_names_.push_back("adam.m." + p->name);
    v_names_.push_back("adam.v." + p->name);
  }
}

void Adam::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Param& p = *params_[i];
    const int64_t n = p.value.numel();
    double* w = p.value.data();
    const double* g = p.grad.data();
    double* m = m_[i].data();
    double* v = v_[i].data();
#pragma omp parallel for schedule(static)
    for (int64_t k = 0; k < n; ++k) {
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      w[k] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (Param* p : params_) p->zero_grad();
}

std::vector<NamedTensor> Adam::state() {
  std::vector<NamedTensor> out;
  out.reserve(2 * params_.size());
  for (size_t i = 0; i < params_.size(); ++i) {
    out.emplace_back(m_names_[i], &m_[i]);
    out.emplace_back(v_names_[i], &v_[i]);
  }
  return out;
}

}  // namespace qareid

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "qareid/rng.hpp"
#include "qareid/tensor.hpp"

namespace qareid {

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  Param() = default;
  Param(std::string n, const std::vector<int64_t>& shape)
      : name(std::move(n)), value(Tensor::zeros(shape)), grad(Tensor::zeros(shape)) {}
  void zero_grad() { grad.zero(); }
};

using NamedTensor = std::pair<std::string, Tensor*>;

// Layers stash what their backward pass needs during forward. backward()
// accumulates into param grads and returns the input gradient, so callers
// zero grads once per step and may run several forwards per backward-free
// evaluation pass.

class Conv2d {
 public:
  Conv2d(std::string name, int in_ch, int out_ch, int ksize, int stride, int pad,
         bool bias = true);
  void init(Rng& rng);  // He-normal weights, zero bias
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);
  std::vector<Param*> params();

  Param weight;  // (out_ch, in_ch, k, k)
  Param bias;    // (out_ch) when enabled, empty otherwise
  int stride, pad;
  bool has_bias;

 private:
  Tensor x_;
};

// Per-channel batch normalization over (N,C) or (N,C,H,W); trailing spatial
// dims are flattened. Training mode normalizes by batch statistics and updates
// running estimates; eval mode uses the running estimates.
class BatchNorm {
 public:
  BatchNorm(std::string name, int channels, double momentum = 0.1, double eps = 1e-5);
  Tensor forward(const Tensor& x, bool train);
  Tensor backward(const Tensor& dy);
  std::vector<Param*> params();
  std::vector<NamedTensor> state();

  Param gamma, beta;
  Tensor running_mean, running_var;
  double momentum, eps;

 private:
  std::string name_;
  Tensor xhat_, inv_std_;  // (N,C,L) and (C)
  int64_t n_ = 0, l_ = 0;
  bool train_mode_ = false;
  std::vector<int64_t> in_shape_;
};

class Linear {
 public:
  Linear(std::string name, int in_features, int out_features, bool bias = true);
  void init(Rng& rng);                      // He-normal
  void init_normal(Rng& rng, double stddev);  // small-std init for classifiers
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);
  std::vector<Param*> params();

  Param weight;  // (out, in)
  Param bias;    // (out) when enabled
  bool has_bias;

 private:
  Tensor x_;
};

class ReLU {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy) const;

 private:
  Tensor x_;
};

class Sigmoid {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy) const;

 private:
  Tensor y_;
};

class MaxPool2d {
 public:
  MaxPool2d(int ksize, int stride, int pad);
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy) const;

 private:
  int ksize_, stride_, pad_;
  std::vector<int64_t> argmax_;  // flat input index per output element
  std::vector<int64_t> in_shape_;
};

double sigmoid_scalar(double x);

}  // namespace qareid

#include "qareid/layers.hpp"

#include <cmath>

#include "qareid/errors.hpp"
#include "qareid/kernels.hpp"

namespace qareid {

double sigmoid_scalar(double x) {
  if (x >= 0.0) {
    double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

Conv2d::Conv2d(std::string name, int in_ch, int out_ch, int ksize, int stride_, int pad_,
               bool with_bias)
    : weight(name + ".weight", {out_ch, in_ch, ksize, ksize}),
      stride(stride_),
      pad(pad_),
      has_bias(with_bias) {
  if (with_bias) bias = Param(name + ".bias", {out_ch});
}

void Conv2d::init(Rng& rng) {
  const auto& s = weight.value.shape();
  double fan_in = static_cast<double>(s[1] * s[2] * s[3]);
  double stddev = std::sqrt(2.0 / fan_in);
  for (double& v : weight.value) v = rng.normal(0.0, stddev);
  if (has_bias) bias.value.zero();
}

Tensor Conv2d::forward(const Tensor& x) {
  x_ = x;
  return kernels::conv2d_forward(x, weight.value, has_bias ? bias.value : Tensor(), stride, pad);
}

Tensor Conv2d::backward(const Tensor& dy) {
  Tensor dummy_db;
  kernels::conv2d_backward_params(x_, dy, stride, pad, weight.grad,
                                  has_bias ? bias.grad : dummy_db);
  return kernels::conv2d_backward_input(dy, weight.value, stride, pad,
                                        static_cast<int>(x_.shape()[2]),
                                        static_cast<int>(x_.shape()[3]));
}

std::vector<Param*> Conv2d::params() {
  std::vector<Param*> p{&weight};
  if (has_bias) p.push_back(&bias);
  return p;
}

BatchNorm::BatchNorm(std::string name, int channels, double momentum_, double eps_)
    : gamma(name + ".gamma", {channels}),
      beta(name + ".beta", {channels}),
      running_mean(Tensor::zeros({channels})),
      running_var(Tensor::full({channels}, 1.0)),
      momentum(momentum_),
      eps(eps_),
      name_(std::move(name)) {
  gamma.value.fill(1.0);
}

Tensor BatchNorm::forward(const Tensor& x, bool train) {
  const auto& s = x.shape();
  if (s.size() < 2) throw ValidationError("batch norm input needs at least 2 dims");
  const int64_t n = s[0], c = s[1];
  if (c != gamma.value.numel())
    throw ValidationError("batch norm channel mismatch: got " + std::to_string(c) + ", expected " +
                          std::to_string(gamma.value.numel()));
  int64_t l = 1;
  for (size_t i = 2; i < s.size(); ++i) l *= s[i];
  n_ = n;
  l_ = l;
  in_shape_ = s;
  train_mode_ = train;

  Tensor y = Tensor::zeros(s);
  xhat_ = Tensor::zeros({n, c, l});
  inv_std_ = Tensor::zeros({c});
  const double* xd = x.data();
  double* yd = y.data();
  double* xh = xhat_.data();

  const int64_t count = n * l;
#pragma omp parallel for schedule(static)
  for (int64_t ch = 0; ch < c; ++ch) {
    double mean, var;
    if (train) {
      double sum = 0.0;
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < l; ++j) sum += xd[(i * c + ch) * l + j];
      mean = sum / count;
      double sq = 0.0;
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < l; ++j) {
          double d = xd[(i * c + ch) * l + j] - mean;
          sq += d * d;
        }
      var = sq / count;
      double unbiased = count > 1 ? sq / (count - 1) : var;
      running_mean[ch] = (1.0 - momentum) * running_mean[ch] + momentum * mean;
      running_var[ch] = (1.0 - momentum) * running_var[ch] + momentum * unbiased;
    } else {
      mean = running_mean[ch];
      var = running_var[ch];
    }
    const double istd = 1.0 / std::sqrt(var + eps);
    inv_std_[ch] = istd;
    const double g = gamma.value[ch], b = beta.value[ch];
    for (int64_t i = 0; i < n; ++i) {
      for (int64_t j = 0; j < l; ++j) {
        const int64_t idx = (i * c + ch) * l + j;
        const double h = (xd[idx] - mean) * istd;
        xh[idx] = h;
        yd[idx] = g * h + b;
      }
    }
  }
  return y;
}

Tensor BatchNorm::backward(const Tensor& dy) {
  const int64_t n = n_, l = l_, c = gamma.value.numel();
  const int64_t count = n * l;
  Tensor dx = Tensor::zeros(in_shape_);
  const double* dyd = dy.data();
  const double* xh = xhat_.data();
  double* dxd = dx.data();

#pragma omp parallel for schedule(static)
  for (int64_t ch = 0; ch < c; ++ch) {
    double sum_dy = 0.0, sum_dyxh = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      for (int64_t j = 0; j < l; ++j) {
        const int64_t idx = (i * c + ch) * l + j;
        sum_dy += dyd[idx];
        sum_dyxh += dyd[idx] * xh[idx];
      }
    }
    gamma.grad[ch] += sum_dyxh;
    beta.grad[ch] += sum_dy;
    const double g = gamma.value[ch], istd = inv_std_[ch];
    if (train_mode_) {
      const double mean_dy = sum_dy / count;
      const double mean_dyxh = sum_dyxh / count;
      for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < l; ++j) {
          const int64_t idx = (i * c + ch) * l + j;
          dxd[idx] = g * istd * (dyd[idx] - mean_dy - xh[idx] * mean_dyxh);
        }
      }
    } else {
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < l; ++j) {
          const int64_t idx = (i * c + ch) * l + j;
          dxd[idx] = g * istd * dyd[idx];
        }
    }
  }
  return dx;
}

std::vector<Param*> BatchNorm::params() { return {&gamma, &beta}; }

std::vector<NamedTensor> BatchNorm::state() {
  return {{name_ + ".running_mean", &running_mean}, {name_ + ".running_var", &running_var}};
}

Linear::Linear(std::string name, int in_features, int out_features, bool with_bias)
    : weight(name + ".weight", {out_features, in_features}), has_bias(with_bias) {
  if (with_bias) bias = Param(name + ".bias", {out_features});
}

void Linear::init(Rng& rng) {
  const auto& s = weight.value.shape();
  double stddev = std::sqrt(2.0 / static_cast<double>(s[1]));
  for (double& v : weight.value) v = rng.normal(0.0, stddev);
  if (has_bias) bias.value.zero();
}

void Linear::init_normal(Rng& rng, double stddev) {
  for (double& v : weight.value) v = rng.normal(0.0, stddev);
  if (has_bias) bias.value.zero();
}

Tensor Linear::forward(const Tensor& x) {
  const int64_t n = x.shape()[0], in = x.shape()[1];
  const int64_t out = weight.value.shape()[0];
  if (in != weight.value.shape()[1])
    throw ValidationError("linear input width " + std::to_string(in) + " != " +
                          std::to_string(weight.value.shape()[1]));
  x_ = x;
  Tensor y = Tensor::zeros({n, out});
  const double* xd = x.data();
  const double* wd = weight.value.data();
  double* yd = y.data();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t o = 0; o < out; ++o) {
      double acc = has_bias ? bias.value[o] : 0.0;
      const double* wrow = wd + o * in;
      const double* xrow = xd + i * in;
      for (int64_t k = 0; k < in; ++k) acc += wrow[k] * xrow[k];
      yd[i * out + o] = acc;
    }
  }
  return y;
}

Tensor Linear::backward(const Tensor& dy) {
  const int64_t n = x_.shape()[0], in = x_.shape()[1];
  const int64_t out = weight.value.shape()[0];
  const double* dyd = dy.data();
  const double* xd = x_.data();
  const double* wd = weight.value.data();

#pragma omp parallel for schedule(static)
  for (int64_t o = 0; o < out; ++o) {
    double* dwrow = weight.grad.data() + o * in;
    double db = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      const double d = dyd[i * out + o];
      const double* xrow = xd + i * in;
      for (int64_t k = 0; k < in; ++k) dwrow[k] += d * xrow[k];
      db += d;
    }
    if (has_bias) bias.grad[o] += db;
  }

  Tensor dx = Tensor::zeros({n, in});
  double* dxd = dx.data();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t o = 0; o < out; ++o) {
      const double d = dyd[i * out + o];
      const double* wrow = wd + o * in;
      for (int64_t k = 0; k < in; ++k) dxd[i * in + k] += d * wrow[k];
    }
  }
  return dx;
}

std::vector<Param*> Linear::params() {
  std::vector<Param*> p{&weight};
  if (has_bias) p.push_back(&bias);
  return p;
}

Tensor ReLU::forward(const Tensor& x) {
  x_ = x;
  Tensor y = x;
  for (double& v : y)
    if (v < 0.0) v = 0.0;
  return y;
}

Tensor ReLU::backward(const Tensor& dy) const {
  Tensor dx = dy;
  const double* xd = x_.data();
  double* d = dx.data();
  for (int64_t i = 0; i < dx.numel(); ++i)
    if (xd[i] <= 0.0) d[i] = 0.0;
  return dx;
}

Tensor Sigmoid::forward(const Tensor& x) {
  Tensor y = x;
  for (double& v : y) v = sigmoid_scalar(v);
  y_ = y;
  return y;
}

Tensor Sigmoid::backward(const Tensor& dy) const {
  Tensor dx = dy;
  const double* yd = y_.data();
  double* d = dx.data();
  for (int64_t i = 0; i < dx.numel(); ++i) d[i] *= yd[i] * (1.0 - yd[i]);
  return dx;
}

MaxPool2d::MaxPool2d(int ksize, int stride, int pad) : ksize_(ksize), stride_(stride), pad_(pad) {}

Tensor MaxPool2d::forward(const Tensor& x) {
  const auto& s = x.shape();
  const int64_t n = s[0], c = s[1], h = s[2], w = s[3];
  const int64_t oh = (h + 2 * pad_ - ksize_) / stride_ + 1;
  const int64_t ow = (w + 2 * pad_ - ksize_) / stride_ + 1;
  in_shape_ = s;
  Tensor y = Tensor::zeros({n, c, oh, ow});
  argmax_.assign(static_cast<size_t>(n * c * oh * ow), -1);
  const double* xd = x.data();
  double* yd = y.data();

#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t ni = 0; ni < n; ++ni) {
    for (int64_t ci = 0; ci < c; ++ci) {
      const double* plane = xd + (ni * c + ci) * h * w;
      for (int64_t oy = 0; oy < oh; ++oy) {
        for (int64_t ox = 0; ox < ow; ++ox) {
          double best = -1e300;
          int64_t best_idx = -1;
          for (int ky = 0; ky < ksize_; ++ky) {
            const int64_t iy = oy * stride_ - pad_ + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < ksize_; ++kx) {
              const int64_t ix = ox * stride_ - pad_ + kx;
              if (ix < 0 || ix >= w) continue;
              const double v = plane[iy * w + ix];
              if (v > best) {
                best = v;
                best_idx = iy * w + ix;
              }
            }
          }
          const int64_t oidx = ((ni * c + ci) * oh + oy) * ow + ox;
          yd[oidx] = best_idx >= 0 ? best : 0.0;
          argmax_[oidx] = best_idx;
        }
      }
    }
  }
  return y;
}

Tensor MaxPool2d::backward(const Tensor& dy) const {
  const int64_t n = in_shape_[0], c = in_shape_[1], h = in_shape_[2], w = in_shape_[3];
  const auto& s = dy.shape();
  const int64_t oh = s[2], ow = s[3];
  Tensor dx = Tensor::zeros(in_shape_);
  const double* dyd = dy.data();
  double* dxd = dx.data();
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t ni = 0; ni < n; ++ni) {
    for (int64_t ci = 0; ci < c; ++ci) {
      double* plane = dxd + (ni * c + ci) * h * w;
      const int64_t base = (ni * c + ci) * oh * ow;
      for (int64_t k = 0; k < oh * ow; ++k) {
        const int64_t idx = argmax_[base + k];
        if (idx >= 0) plane[idx] += dyd[base + k];
      }
    }
  }
  return dx;
}

}  // namespace qareid

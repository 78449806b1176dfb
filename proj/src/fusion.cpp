#include "qareid/fusion.hpp"

#include <algorithm>
#include <cmath>

#include "qareid/errors.hpp"
#include "qareid/kernels.hpp"

namespace qareid {

MultiModalAttention::MultiModalAttention(const std::string& name, int channels)
    : mlp_w1(name + ".mlp_w1", {std::max(1, 2 * channels / 16), 2 * channels}),
      mlp_b1(name + ".mlp_b1", {std::max(1, 2 * channels / 16)}),
      mlp_w2(name + ".mlp_w2", {channels, std::max(1, 2 * channels / 16)}),
      mlp_b2(name + ".mlp_b2", {channels}),
      spatial_conv(name + ".spatial_conv", 2, 1, 7, 1, 3),
      c_(channels),
      hidden_(std::max(1, 2 * channels / 16)) {}

void MultiModalAttention::init(Rng& rng) {
  double s1 = std::sqrt(2.0 / (2.0 * c_));
  for (double& v : mlp_w1.value) v = rng.normal(0.0, s1);
  mlp_b1.value.zero();
  double s2 = std::sqrt(2.0 / hidden_);
  for (double& v : mlp_w2.value) v = rng.normal(0.0, s2);
  mlp_b2.value.zero();
  spatial_conv.init(rng);
}

Tensor MultiModalAttention::forward(const Tensor& f_rgb, const Tensor& f_par) {
  if (!f_rgb.same_shape(f_par))
    throw ValidationError("attention branch shapes differ: " + f_rgb.shape_str() + " vs " +
                          f_par.shape_str());
  const auto& s = f_rgb.shape();
  if (s.size() != 4 || s[1] != c_)
    throw ValidationError("attention expects (N," + std::to_string(c_) + ",H,W), got " +
                          f_rgb.shape_str());
  const int64_t n = s[0], c = c_, h = s[2], w = s[3], hw = h * w;
  n_ = n;
  h_ = h;
  w_ = w;

  avg_ = Tensor::zeros({n, 2 * c});
  mx_ = Tensor::zeros({n, 2 * c});
  mx_arg_.assign(static_cast<size_t>(n * 2 * c), 0);
  const double* frd = f_rgb.data();
  const double* fpd = f_par.data();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t branch = 0; branch < 2; ++branch) {
      const double* src = branch == 0 ? frd : fpd;
      for (int64_t ch = 0; ch < c; ++ch) {
        const double* plane = src + (i * c + ch) * hw;
        double sum = 0.0, best = plane[0];
        int64_t arg = 0;
        for (int64_t k = 0; k < hw; ++k) {
          sum += plane[k];
          if (plane[k] > best) {
            best = plane[k];
            arg = k;
          }
        }
        avg_[i * 2 * c + branch * c + ch] = sum / hw;
        mx_[i * 2 * c + branch * c + ch] = best;
        mx_arg_[i * 2 * c + branch * c + ch] = arg;
      }
    }
  }

  ha_pre_ = Tensor::zeros({n, hidden_});
  hm_pre_ = Tensor::zeros({n, hidden_});
  channel_ = Tensor::zeros({n, c});
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < hidden_; ++j) {
      double za = mlp_b1.value[j], zm = mlp_b1.value[j];
      const double* wrow = mlp_w1.value.data() + j * 2 * c;
      for (int64_t k = 0; k < 2 * c; ++k) {
        za += wrow[k] * avg_[i * 2 * c + k];
        zm += wrow[k] * mx_[i * 2 * c + k];
      }
      ha_pre_[i * hidden_ + j] = za;
      hm_pre_[i * hidden_ + j] = zm;
    }
    for (int64_t o = 0; o < c; ++o) {
      double z = 2.0 * mlp_b2.value[o];
      const double* wrow = mlp_w2.value.data() + o * hidden_;
      for (int64_t j = 0; j < hidden_; ++j) {
        z += wrow[j] * (std::max(0.0, ha_pre_[i * hidden_ + j]) +
                        std::max(0.0, hm_pre_[i * hidden_ + j]));
      }
      channel_[i * c + o] = sigmoid_scalar(z);
    }
  }

  Tensor sin = Tensor::zeros({n, 2, h, w});
  smax_arg_.assign(static_cast<size_t>(n * hw), 0);
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t k = 0; k < hw; ++k) {
      double sum = 0.0;
      double best = frd[(i * c) * hw + k];
      int32_t arg = 0;
      for (int64_t ch = 0; ch < c; ++ch) {
        const double vr = frd[(i * c + ch) * hw + k];
        const double vp = fpd[(i * c + ch) * hw + k];
        sum += vr + vp;
        if (vr > best) {
          best = vr;
          arg = static_cast<int32_t>(ch);
        }
        if (vp > best) {
          best = vp;
          arg = static_cast<int32_t>(c + ch);
        }
      }
      sin[(i * 2) * hw + k] = sum / (2.0 * c);
      sin[(i * 2 + 1) * hw + k] = best;
      smax_arg_[i * hw + k] = arg;
    }
  }
  Tensor slog = spatial_conv.forward(sin);
  spatial_ = slog;
  for (double& v : spatial_) v = sigmoid_scalar(v);

  Tensor omega = Tensor::zeros({n, c, h, w});
  double* od = omega.data();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t ch = 0; ch < c; ++ch) {
      const double cm = channel_[i * c + ch];
      const double* sp = spatial_.data() + i * hw;
      double* out = od + (i * c + ch) * hw;
      for (int64_t k = 0; k < hw; ++k) out[k] = cm * sp[k];
    }
  }
  return omega;
}

void MultiModalAttention::backward(const Tensor& domega, Tensor& df_rgb, Tensor& df_par) {
  const int64_t n = n_, c = c_, hw = h_ * w_;
  const double* dod = domega.data();

  Tensor dchannel = Tensor::zeros({n, c});
  Tensor dspatial = Tensor::zeros({n, 1, h_, w_});
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    const double* sp = spatial_.data() + i * hw;
    for (int64_t ch = 0; ch < c; ++ch) {
      const double* d = dod + (i * c + ch) * hw;
      const double cm = channel_[i * c + ch];
      double acc = 0.0;
      for (int64_t k = 0; k < hw; ++k) acc += d[k] * sp[k];
      dchannel[i * c + ch] = acc;
      double* dsp = dspatial.data() + i * hw;
      for (int64_t k = 0; k < hw; ++k) dsp[k] += cm * d[k];
    }
  }

  // channel squash and shared bottleneck, both pooled paths
  Tensor davg = Tensor::zeros({n, 2 * c});
  Tensor dmx = Tensor::zeros({n, 2 * c});
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    std::vector<double> dz(c);
    for (int64_t o = 0; o < c; ++o) {
      const double ch = channel_[i * c + o];
      dz[o] = dchannel[i * c + o] * ch * (1.0 - ch);
    }
    std::vector<double> dha(hidden_, 0.0), dhm(hidden_, 0.0);
    for (int64_t o = 0; o < c; ++o) {
      const double* wrow = mlp_w2.value.data() + o * hidden_;
      for (int64_t j = 0; j < hidden_; ++j) {
        dha[j] += dz[o] * wrow[j];
        dhm[j] += dz[o] * wrow[j];
      }
    }
    for (int64_t j = 0; j < hidden_; ++j) {
      if (ha_pre_[i * hidden_ + j] <= 0.0) dha[j] = 0.0;
      if (hm_pre_[i * hidden_ + j] <= 0.0) dhm[j] = 0.0;
    }
    for (int64_t j = 0; j < hidden_; ++j) {
      const double* wrow = mlp_w1.value.data() + j * 2 * c;
      for (int64_t k = 0; k < 2 * c; ++k) {
        davg[i * 2 * c + k] += dha[j] * wrow[k];
        dmx[i * 2 * c + k] += dhm[j] * wrow[k];
      }
    }
  }
  // parameter grads, serial accumulation keeps them deterministic
  for (int64_t i = 0; i < n; ++i) {
    std::vector<double> dz(c), dha(hidden_, 0.0), dhm(hidden_, 0.0);
    for (int64_t o = 0; o < c; ++o) {
      const double ch = channel_[i * c + o];
      dz[o] = dchannel[i * c + o] * ch * (1.0 - ch);
    }
    for (int64_t o = 0; o < c; ++o) {
      double* dwrow = mlp_w2.grad.data() + o * hidden_;
      const double* wrow = mlp_w2.value.data() + o * hidden_;
      for (int64_t j = 0; j < hidden_; ++j) {
        const double ha = std::max(0.0, ha_pre_[i * hidden_ + j]);
        const double hm = std::max(0.0, hm_pre_[i * hidden_ + j]);
        dwrow[j] += dz[o] * (ha + hm);
        dha[j] += dz[o] * wrow[j];
        dhm[j] += dz[o] * wrow[j];
      }
      mlp_b2.grad[o] += 2.0 * dz[o];
    }
    for (int64_t j = 0; j < hidden_; ++j) {
      if (ha_pre_[i * hidden_ + j] <= 0.0) dha[j] = 0.0;
      if (hm_pre_[i * hidden_ + j] <= 0.0) dhm[j] = 0.0;
      double* dwrow = mlp_w1.grad.data() + j * 2 * c;
      for (int64_t k = 0; k < 2 * c; ++k)
        dwrow[k] += dha[j] * avg_[i * 2 * c + k] + dhm[j] * mx_[i * 2 * c + k];
      mlp_b1.grad[j] += dha[j] + dhm[j];
    }
  }

  double* drd = df_rgb.data();
  double* dpd = df_par.data();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t branch = 0; branch < 2; ++branch) {
      double* dst = branch == 0 ? drd : dpd;
      for (int64_t ch = 0; ch < c; ++ch) {
        const int64_t col = branch * c + ch;
        const double da = davg[i * 2 * c + col] / hw;
        double* plane = dst + (i * c + ch) * hw;
        for (int64_t k = 0; k < hw; ++k) plane[k] += da;
        plane[mx_arg_[i * 2 * c + col]] += dmx[i * 2 * c + col];
      }
    }
  }

  // spatial squash, conv, then the two channel-pooling reductions
  Tensor dslog = dspatial;
  {
    double* d = dslog.data();
    const double* sp = spatial_.data();
    for (int64_t i = 0; i < dslog.numel(); ++i) d[i] *= sp[i] * (1.0 - sp[i]);
  }
  Tensor dsin = spatial_conv.backward(dslog);
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    const double* dmean = dsin.data() + (i * 2) * hw;
    const double* dmax = dsin.data() + (i * 2 + 1) * hw;
    for (int64_t k = 0; k < hw; ++k) {
      const double dm = dmean[k] / (2.0 * c);
      for (int64_t ch = 0; ch < c; ++ch) {
        drd[(i * c + ch) * hw + k] += dm;
        dpd[(i * c + ch) * hw + k] += dm;
      }
      const int32_t arg = smax_arg_[i * hw + k];
      if (arg < c) {
        drd[(i * c + arg) * hw + k] += dmax[k];
      } else {
        dpd[(i * c + (arg - c)) * hw + k] += dmax[k];
      }
    }
  }
}

std::vector<Param*> MultiModalAttention::params() {
  std::vector<Param*> out{&mlp_w1, &mlp_b1, &mlp_w2, &mlp_b2};
  for (Param* p : spatial_conv.params()) out.push_back(p);
  return out;
}

FusionModule::FusionModule(const std::string& name, int channels)
    : conv1x1(name + ".conv1x1", channels, channels, 1, 1, 0) {}

void FusionModule::init(Rng& rng) { conv1x1.init(rng); }

Tensor FusionModule::forward(const Tensor& f_rgb, const Tensor& f_par, const Tensor& omega) {
  if (!f_rgb.same_shape(f_par) || !f_rgb.same_shape(omega))
    throw ValidationError("fusion inputs must share one shape");
  f_rgb_ = f_rgb;
  f_par_ = f_par;
  omega_ = omega;
  mix_ = Tensor::zeros(f_rgb.shape());
  sum_ = Tensor::zeros(f_rgb.shape());
  const double* r = f_rgb.data();
  const double* p = f_par.data();
  const double* o = omega.data();
  double* m = mix_.data();
  double* s = sum_.data();
  const int64_t total = f_rgb.numel();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < total; ++i) {
    m[i] = o[i] * r[i] + (1.0 - o[i]) * p[i];
    s[i] = r[i] + p[i] + m[i];
  }
  return conv1x1.forward(sum_);
}

void FusionModule::backward(const Tensor& dfuse, Tensor& df_rgb, Tensor& df_par, Tensor& domega) {
  Tensor dsum = conv1x1.backward(dfuse);
  const double* d = dsum.data();
  const double* r = f_rgb_.data();
  const double* p = f_par_.data();
  const double* o = omega_.data();
  double* dr = df_rgb.data();
  double* dp = df_par.data();
  double* dom = domega.data();
  const int64_t total = dsum.numel();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < total; ++i) {
    dr[i] += d[i] * (1.0 + o[i]);
    dp[i] += d[i] * (2.0 - o[i]);
    dom[i] += d[i] * (r[i] - p[i]);
  }
}

std::vector<Param*> FusionModule::params() { return conv1x1.params(); }

EmbedHead::EmbedHead(const std::string& name, int channels) : bn(name + ".bn", channels) {}

std::pair<Tensor, Tensor> EmbedHead::forward(const Tensor& fmap, bool train) {
  const auto& s = fmap.shape();
  h_ = s[2];
  w_ = s[3];
  Tensor pre = kernels::global_avg_pool(fmap);
  Tensor post = bn.forward(pre, train);
  return {pre, post};
}

Tensor EmbedHead::backward(const Tensor& d_pre, const Tensor& d_post) {
  Tensor d;
  if (d_post.numel() > 0) {
    d = bn.backward(d_post);
    if (d_pre.numel() > 0) d.axpy(1.0, d_pre);
  } else {
    d = d_pre;
  }
  return kernels::global_avg_pool_backward(d, static_cast<int>(h_), static_cast<int>(w_));
}

std::vector<Param*> EmbedHead::params() { return bn.params(); }

std::vector<NamedTensor> EmbedHead::state() { return bn.state(); }

Classifier::Classifier(const std::string& name, int channels, int n_classes)
    : fc(name + ".fc", channels, n_classes, false) {}

void Classifier::init(Rng& rng) { fc.init_normal(rng, 0.001); }

Tensor Classifier::forward(const Tensor& embed) { return fc.forward(embed); }

Tensor Classifier::backward(const Tensor& dlogits) { return fc.backward(dlogits); }

std::vector<Param*> Classifier::params() { return fc.params(); }

}  // namespace qareid

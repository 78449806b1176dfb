#include "qareid/ref_kernels.hpp"

#include <cassert>
#include <cmath>

namespace qareid::ref {

std::vector<double> quality_weights(const std::vector<uint8_t>& mask, int mask_h, int mask_w,
                                    int out_h, int out_w) {
  int kh = mask_h / out_h;
  int kw = mask_w / out_w;
  assert(kh == kw && kh >= 1);
  int k = kh;

  std::vector<double> qbar(static_cast<size_t>(out_h) * out_w, 0.0);
  for (int i = 0; i < out_h; ++i) {
    for (int j = 0; j < out_w; ++j) {
      double s = 0.0;
      for (int ii = i * k; ii <= i * k + k - 1; ++ii) {
        for (int jj = j * k; jj <= j * k + k - 1; ++jj) {
          s += mask[static_cast<size_t>(ii) * mask_w + jj];
        }
      }
      qbar[static_cast<size_t>(i) * out_w + j] = s / (k * k);
    }
  }

  double denom = 0.0;
  for (double v : qbar) denom += std::exp(v);
  std::vector<double> q(qbar.size());
  for (size_t i = 0; i < qbar.size(); ++i) q[i] = std::exp(qbar[i]) / denom;
  return q;
}

Tensor pixel_similarity(const Tensor& f1, const std::vector<double>& q1, const Tensor& f2,
                        const std::vector<double>& q2) {
  assert(f1.ndim() == 3 && f1.same_shape(f2));
  int64_t c = f1.dim(0), h = f1.dim(1), w = f1.dim(2);
  int64_t n = h * w;
  Tensor sim({n, n});
  for (int64_t i1 = 0; i1 < h; ++i1) {
    for (int64_t j1 = 0; j1 < w; ++j1) {
      for (int64_t i2 = 0; i2 < h; ++i2) {
        for (int64_t j2 = 0; j2 < w; ++j2) {
          double dot = 0.0, n1 = 0.0, n2 = 0.0;
          for (int64_t ch = 0; ch < c; ++ch) {
            double a = f1.at(ch, i1, j1);
            double b = f2.at(ch, i2, j2);
            dot += a * b;
            n1 += a * a;
            n2 += b * b;
          }
          double rho = 0.0;
          if (n1 > 0.0 && n2 > 0.0) rho = dot / (std::sqrt(n1) * std::sqrt(n2));
          int64_t p = i1 * w + j1;
          int64_t q = i2 * w + j2;
          // weights rescaled from sum 1 to mean 1, matching the fast kernel
          sim.at(p, q) = (n * q1[static_cast<size_t>(p)]) * (n * q2[static_cast<size_t>(q)]) * rho;
        }
      }
    }
  }
  return sim;
}

Tensor bidirectional_similarity(const Tensor& sim1) {
  assert(sim1.ndim() == 2 && sim1.dim(0) == sim1.dim(1));
  int64_t n = sim1.dim(0);

  // softmax over image-1 positions, one per image-2 position (per column)
  Tensor rho_1_given_2({n, n});
  for (int64_t q = 0; q < n; ++q) {
    double denom = 0.0;
    for (int64_t p = 0; p < n; ++p) denom += std::exp(sim1.at(p, q));
    for (int64_t p = 0; p < n; ++p) rho_1_given_2.at(p, q) = std::exp(sim1.at(p, q)) / denom;
  }

  // softmax over image-2 positions, one per image-1 position (per row)
  Tensor rho_2_given_1({n, n});
  for (int64_t p = 0; p < n; ++p) {
    double denom = 0.0;
    for (int64_t q = 0; q < n; ++q) denom += std::exp(sim1.at(p, q));
    for (int64_t q = 0; q < n; ++q) rho_2_given_1.at(p, q) = std::exp(sim1.at(p, q)) / denom;
  }

  Tensor sim2({n, n});
  for (int64_t p = 0; p < n; ++p)
    for (int64_t q = 0; q < n; ++q) sim2.at(p, q) = rho_1_given_2.at(p, q) * rho_2_given_1.at(p, q);
  return sim2;
}

std::vector<double> bi_gmp(const Tensor& sim2) {
  assert(sim2.ndim() == 2 && sim2.dim(0) == sim2.dim(1));
  int64_t n = sim2.dim(0);
  std::vector<double> v(static_cast<size_t>(2 * n));
  for (int64_t p = 0; p < n; ++p) {
    double m = sim2.at(p, 0);
    for (int64_t q = 1; q < n; ++q) m = std::max(m, sim2.at(p, q));
    v[static_cast<size_t>(p)] = m;
  }
  for (int64_t q = 0; q < n; ++q) {
    double m = sim2.at(0, q);
    for (int64_t p = 1; p < n; ++p) m = std::max(m, sim2.at(p, q));
    v[static_cast<size_t>(n + q)] = m;
  }
  return v;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  assert(x.ndim() == 4 && w.ndim() == 4 && x.dim(1) == w.dim(1));
  int64_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), ww = x.dim(3);
  int64_t co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  int64_t ho = (h + 2 * pad - kh) / stride + 1;
  int64_t wo = (ww + 2 * pad - kw) / stride + 1;
  Tensor y({n, co, ho, wo});
  for (int64_t in = 0; in < n; ++in) {
    for (int64_t oc = 0; oc < co; ++oc) {
      for (int64_t oh = 0; oh < ho; ++oh) {
        for (int64_t ow = 0; ow < wo; ++ow) {
          double s = b.numel() > 0 ? b[oc] : 0.0;
          for (int64_t ic = 0; ic < ci; ++ic) {
            for (int64_t r = 0; r < kh; ++r) {
              for (int64_t cidx = 0; cidx < kw; ++cidx) {
                int64_t ih = oh * stride + r - pad;
                int64_t iw = ow * stride + cidx - pad;
                if (ih < 0 || ih >= h || iw < 0 || iw >= ww) continue;
                s += x.at(in, ic, ih, iw) * w.at(oc, ic, r, cidx);
              }
            }
          }
          y.at(in, oc, oh, ow) = s;
        }
      }
    }
  }
  return y;
}

Tensor global_avg_pool(const Tensor& x) {
  assert(x.ndim() == 4);
  int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor y({n, c});
  for (int64_t in = 0; in < n; ++in) {
    for (int64_t ic = 0; ic < c; ++ic) {
      double s = 0.0;
      for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j) s += x.at(in, ic, i, j);
      y.at(in, ic) = s / static_cast<double>(h * w);
    }
  }
  return y;
}

}  // namespace qareid::ref

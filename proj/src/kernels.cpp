#include "qareid/kernels.hpp"

#include <cassert>
#include <cmath>

namespace qareid::kernels {

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  assert(x.ndim() == 4 && w.ndim() == 4 && x.dim(1) == w.dim(1));
  const int64_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), iw = x.dim(3);
  const int64_t co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int64_t ho = (h + 2 * pad - kh) / stride + 1;
  const int64_t wo = (iw + 2 * pad - kw) / stride + 1;
  Tensor y({n, co, ho, wo});
  const double* xd = x.data();
  const double* wd = w.data();
  const double* bd = b.numel() > 0 ? b.data() : nullptr;
  double* yd = y.data();

#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t in = 0; in < n; ++in) {
    for (int64_t oc = 0; oc < co; ++oc) {
      const double* wbase = wd + oc * ci * kh * kw;
      double* ybase = yd + (in * co + oc) * ho * wo;
      for (int64_t oh = 0; oh < ho; ++oh) {
        for (int64_t ow = 0; ow < wo; ++ow) {
          double s = bd ? bd[oc] : 0.0;
          for (int64_t ic = 0; ic < ci; ++ic) {
            const double* xch = xd + (in * ci + ic) * h * iw;
            const double* wch = wbase + ic * kh * kw;
            for (int64_t r = 0; r < kh; ++r) {
              const int64_t ih = oh * stride + r - pad;
              if (ih < 0 || ih >= h) continue;
              const double* xrow = xch + ih * iw;
              const double* wrow = wch + r * kw;
              for (int64_t c = 0; c < kw; ++c) {
                const int64_t iww = ow * stride + c - pad;
                if (iww < 0 || iww >= iw) continue;
                s += xrow[iww] * wrow[c];
              }
            }
          }
          ybase[oh * wo + ow] = s;
        }
      }
    }
  }
  return y;
}

Tensor conv2d_backward_input(const Tensor& dy, const Tensor& w, int stride, int pad, int64_t in_h,
                             int64_t in_w) {
  const int64_t n = dy.dim(0), co = dy.dim(1), ho = dy.dim(2), wo = dy.dim(3);
  const int64_t ci = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  Tensor dx({n, ci, in_h, in_w});
  const double* gd = dy.data();
  const double* wd = w.data();
  double* xd = dx.data();

#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t in = 0; in < n; ++in) {
    for (int64_t ic = 0; ic < ci; ++ic) {
      double* xch = xd + (in * ci + ic) * in_h * in_w;
      for (int64_t ih = 0; ih < in_h; ++ih) {
        for (int64_t iw = 0; iw < in_w; ++iw) {
          double s = 0.0;
          for (int64_t r = 0; r < kh; ++r) {
            const int64_t num_h = ih + pad - r;
            if (num_h < 0 || num_h % stride != 0) continue;
            const int64_t oh = num_h / stride;
            if (oh >= ho) continue;
            for (int64_t c = 0; c < kw; ++c) {
              const int64_t num_w = iw + pad - c;
              if (num_w < 0 || num_w % stride != 0) continue;
              const int64_t ow = num_w / stride;
              if (ow >= wo) continue;
              for (int64_t oc = 0; oc < co; ++oc) {
                s += gd[((in * co + oc) * ho + oh) * wo + ow] *
                     wd[((oc * ci + ic) * kh + r) * kw + c];
              }
            }
          }
          xch[ih * in_w + iw] = s;
        }
      }
    }
  }
  return dx;
}

void conv2d_backward_params(const Tensor& x, const Tensor& dy, int stride, int pad, Tensor& dw,
                            Tensor& db) {
  const int64_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), iw = x.dim(3);
  const int64_t co = dy.dim(1), ho = dy.dim(2), wo = dy.dim(3);
  const int64_t kh = dw.dim(2), kw = dw.dim(3);
  const double* xd = x.data();
  const double* gd = dy.data();
  double* dwd = dw.data();

#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t oc = 0; oc < co; ++oc) {
    for (int64_t ic = 0; ic < ci; ++ic) {
      for (int64_t r = 0; r < kh; ++r) {
        for (int64_t c = 0; c < kw; ++c) {
          double s = 0.0;
          for (int64_t in = 0; in < n; ++in) {
            const double* xch = xd + (in * ci + ic) * h * iw;
            const double* gch = gd + (in * co + oc) * ho * wo;
            for (int64_t oh = 0; oh < ho; ++oh) {
              const int64_t ih = oh * stride + r - pad;
              if (ih < 0 || ih >= h) continue;
              for (int64_t ow = 0; ow < wo; ++ow) {
                const int64_t iww = ow * stride + c - pad;
                if (iww < 0 || iww >= iw) continue;
                s += gch[oh * wo + ow] * xch[ih * iw + iww];
              }
            }
          }
          dwd[((oc * ci + ic) * kh + r) * kw + c] += s;
        }
      }
    }
  }

  if (db.numel() > 0) {
    double* dbd = db.data();
#pragma omp parallel for schedule(static)
    for (int64_t oc = 0; oc < co; ++oc) {
      double s = 0.0;
      for (int64_t in = 0; in < n; ++in) {
        const double* gch = gd + (in * co + oc) * ho * wo;
        for (int64_t i = 0; i < ho * wo; ++i) s += gch[i];
      }
      dbd[oc] += s;
    }
  }
}

void quality_weights(const uint8_t* mask, int mask_h, int mask_w, int out_h, int out_w,
                     double* q_out) {
  const int k = mask_h / out_h;
  const int64_t n = static_cast<int64_t>(out_h) * out_w;
  const double inv = 1.0 / (k * k);

#pragma omp parallel for collapse(2) schedule(static)
  for (int i = 0; i < out_h; ++i) {
    for (int j = 0; j < out_w; ++j) {
      int64_t s = 0;
      for (int r = i * k; r < i * k + k; ++r) {
        const uint8_t* row = mask + static_cast<int64_t>(r) * mask_w;
        for (int c = j * k; c < j * k + k; ++c) s += row[c];
      }
      q_out[static_cast<int64_t>(i) * out_w + j] = static_cast<double>(s) * inv;
    }
  }

  double mx = q_out[0];
  for (int64_t i = 1; i < n; ++i) mx = std::max(mx, q_out[i]);
  double denom = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    q_out[i] = std::exp(q_out[i] - mx);
    denom += q_out[i];
  }
  const double inv_denom = 1.0 / denom;
  for (int64_t i = 0; i < n; ++i) q_out[i] *= inv_denom;
}

void normalize_pixels(const double* f, int64_t c, int64_t hw, double* npix, double* norms) {
#pragma omp parallel for schedule(static)
  for (int64_t p = 0; p < hw; ++p) {
    double s = 0.0;
    for (int64_t ch = 0; ch < c; ++ch) {
      const double v = f[ch * hw + p];
      s += v * v;
    }
    const double nrm = std::sqrt(s);
    norms[p] = nrm;
    double* out = npix + p * c;
    if (nrm > 0.0) {
      const double inv = 1.0 / nrm;
      for (int64_t ch = 0; ch < c; ++ch) out[ch] = f[ch * hw + p] * inv;
    } else {
      for (int64_t ch = 0; ch < c; ++ch) out[ch] = 0.0;
    }
  }
}

void sim1_pair(const double* n1, const double* q1, const double* n2, const double* q2, int64_t hw,
               int64_t c, double* s1) {
  // Quality weights arrive normalized to sum 1; rescale each side by hw so the
  // weights have mean 1 and the weighted cosines keep an O(1) range at any grid
  // size. Without this the downstream softmaxes see spreads of order 1/hw^2 and
  // flatten to uniform on anything bigger than a couple of positions.
  const double scale = static_cast<double>(hw) * static_cast<double>(hw);
  for (int64_t p = 0; p < hw; ++p) {
    const double* a = n1 + p * c;
    double* row = s1 + p * hw;
    const double qp = scale * q1[p];
    for (int64_t q = 0; q < hw; ++q) {
      const double* b = n2 + q * c;
      double dot = 0.0;
      for (int64_t ch = 0; ch < c; ++ch) dot += a[ch] * b[ch];
      row[q] = qp * q2[q] * dot;
    }
  }
}

void bidirectional_pair(const double* s1, int64_t hw, double* r_col, double* r_row, double* s2) {
  // row softmax (over image-2 positions) written into s2 first
  for (int64_t p = 0; p < hw; ++p) {
    const double* row = s1 + p * hw;
    double* out = s2 + p * hw;
    double mx = row[0];
    for (int64_t q = 1; q < hw; ++q) mx = std::max(mx, row[q]);
    double denom = 0.0;
    for (int64_t q = 0; q < hw; ++q) {
      out[q] = std::exp(row[q] - mx);
      denom += out[q];
    }
    const double inv = 1.0 / denom;
    for (int64_t q = 0; q < hw; ++q) out[q] *= inv;
    if (r_row) {
      for (int64_t q = 0; q < hw; ++q) r_row[p * hw + q] = out[q];
    }
  }
  // column softmax (over image-1 positions), multiplied in
  for (int64_t q = 0; q < hw; ++q) {
    double mx = s1[q];
    for (int64_t p = 1; p < hw; ++p) mx = std::max(mx, s1[p * hw + q]);
    double denom = 0.0;
    for (int64_t p = 0; p < hw; ++p) denom += std::exp(s1[p * hw + q] - mx);
    const double inv = 1.0 / denom;
    for (int64_t p = 0; p < hw; ++p) {
      const double rc = std::exp(s1[p * hw + q] - mx) * inv;
      if (r_col) r_col[p * hw + q] = rc;
      s2[p * hw + q] *= rc;
    }
  }
}

void bigmp_pair(const double* s2, int64_t hw, double* v, int* arg_row, int* arg_col) {
  for (int64_t p = 0; p < hw; ++p) {
    const double* row = s2 + p * hw;
    double m = row[0];
    int am = 0;
    for (int64_t q = 1; q < hw; ++q) {
      if (row[q] > m) {
        m = row[q];
        am = static_cast<int>(q);
      }
    }
    v[p] = m;
    if (arg_row) arg_row[p] = am;
  }
  for (int64_t q = 0; q < hw; ++q) {
    double m = s2[q];
    int am = 0;
    for (int64_t p = 1; p < hw; ++p) {
      if (s2[p * hw + q] > m) {
        m = s2[p * hw + q];
        am = static_cast<int>(p);
      }
    }
    v[hw + q] = m;
    if (arg_col) arg_col[q] = am;
  }
}

Tensor global_avg_pool(const Tensor& x) {
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t hw = h * w;
  Tensor y({n, c});
  const double* xd = x.data();
  double* yd = y.data();
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t in = 0; in < n; ++in) {
    for (int64_t ic = 0; ic < c; ++ic) {
      const double* ch = xd + (in * c + ic) * hw;
      double s = 0.0;
      for (int64_t i = 0; i < hw; ++i) s += ch[i];
      yd[in * c + ic] = s / static_cast<double>(hw);
    }
  }
  return y;
}

Tensor global_avg_pool_backward(const Tensor& dy, int64_t h, int64_t w) {
  const int64_t n = dy.dim(0), c = dy.dim(1);
  const int64_t hw = h * w;
  Tensor dx({n, c, h, w});
  const double* gd = dy.data();
  double* xd = dx.data();
  const double inv = 1.0 / static_cast<double>(hw);
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t in = 0; in < n; ++in) {
    for (int64_t ic = 0; ic < c; ++ic) {
      const double g = gd[in * c + ic] * inv;
      double* ch = xd + (in * c + ic) * hw;
      for (int64_t i = 0; i < hw; ++i) ch[i] = g;
    }
  }
  return dx;
}

}  // namespace qareid::kernels

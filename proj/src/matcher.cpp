#include "qareid/matcher.hpp"

#include <algorithm>
#include <cmath>

#include "qareid/errors.hpp"
#include "qareid/kernels.hpp"

namespace qareid {

QualityMap compute_quality_weights(const BodyMask& mask, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw ConfigError("quality grid must be at least 1x1");
  const int kh = mask.h / out_h;
  const int kw = mask.w / out_w;
  if (kh < 1 || kw < 1) {
    throw ConfigError("mask " + std::to_string(mask.h) + "x" + std::to_string(mask.w) +
                      " smaller than quality grid " + std::to_string(out_h) + "x" +
                      std::to_string(out_w));
  }
  if (kh != kw) {
    throw ConfigError("block size must match in both axes: floor(" + std::to_string(mask.h) +
                      "/" + std::to_string(out_h) + ")=" + std::to_string(kh) + " vs floor(" +
                      std::to_string(mask.w) + "/" + std::to_string(out_w) + ")=" +
                      std::to_string(kw));
  }
  QualityMap q;
  q.h = out_h;
  q.w = out_w;
  q.q.resize(static_cast<size_t>(out_h) * out_w);
  kernels::quality_weights(mask.m.data(), mask.h, mask.w, out_h, out_w, q.q.data());
  return q;
}

QualityMap uniform_quality(int out_h, int out_w) {
  QualityMap q;
  q.h = out_h;
  q.w = out_w;
  q.q.assign(static_cast<size_t>(out_h) * out_w,
             1.0 / (static_cast<double>(out_h) * out_w));
  return q;
}

namespace {

void check_pair_shapes(const Tensor& f1, const QualityMap& q1, const Tensor& f2,
                       const QualityMap& q2) {
  if (!f1.same_shape(f2))
    throw ValidationError("feature maps differ in shape: " + f1.shape_str() + " vs " +
                          f2.shape_str());
  if (f1.ndim() != 3) throw ValidationError("expected (C,H,W) feature map, got " + f1.shape_str());
  const int64_t hw = f1.dim(1) * f1.dim(2);
  if (static_cast<int64_t>(q1.q.size()) != hw || static_cast<int64_t>(q2.q.size()) != hw)
    throw ValidationError("quality map size does not match feature grid");
}

}  // namespace

Tensor pixel_similarity(const Tensor& f1, const QualityMap& q1, const Tensor& f2,
                        const QualityMap& q2) {
  check_pair_shapes(f1, q1, f2, q2);
  const int64_t c = f1.dim(0), hw = f1.dim(1) * f1.dim(2);
  std::vector<double> n1(static_cast<size_t>(hw) * c), n2(static_cast<size_t>(hw) * c);
  std::vector<double> norms(static_cast<size_t>(hw));
  kernels::normalize_pixels(f1.data(), c, hw, n1.data(), norms.data());
  kernels::normalize_pixels(f2.data(), c, hw, n2.data(), norms.data());
  Tensor s1({hw, hw});
  kernels::sim1_pair(n1.data(), q1.q.data(), n2.data(), q2.q.data(), hw, c, s1.data());
  return s1;
}

Tensor bidirectional_similarity(const Tensor& sim1) {
  if (sim1.ndim() != 2 || sim1.dim(0) != sim1.dim(1))
    throw ValidationError("similarity tensor must be square, got " + sim1.shape_str());
  const int64_t hw = sim1.dim(0);
  Tensor s2({hw, hw});
  kernels::bidirectional_pair(sim1.data(), hw, nullptr, nullptr, s2.data());
  return s2;
}

std::vector<double> bi_gmp(const Tensor& sim2) {
  if (sim2.ndim() != 2 || sim2.dim(0) != sim2.dim(1))
    throw ValidationError("similarity tensor must be square, got " + sim2.shape_str());
  const int64_t hw = sim2.dim(0);
  std::vector<double> v(static_cast<size_t>(2 * hw));
  kernels::bigmp_pair(sim2.data(), hw, v.data(), nullptr, nullptr);
  return v;
}

ScoreHead::ScoreHead(const std::string& name, int hw_, int hidden)
    : bn(name + ".bn", 2 * hw_),
      fc1(name + ".fc1", 2 * hw_, hidden),
      fc2(name + ".fc2", hidden, 1),
      hw(hw_) {}

void ScoreHead::init(Rng& rng) {
  fc1.init(rng);
  fc2.init(rng);
}

Tensor ScoreHead::forward(const Tensor& v, bool train) {
  if (v.ndim() != 2 || v.dim(1) != 2 * hw)
    throw ValidationError("score head expects (N," + std::to_string(2 * hw) + "), got " +
                          v.shape_str());
  Tensor h = fc2.forward(relu_.forward(fc1.forward(bn.forward(v, train))));
  Tensor logits({h.dim(0)});
  std::copy(h.data(), h.data() + h.numel(), logits.data());
  return logits;
}

Tensor ScoreHead::backward(const Tensor& dlogits) {
  Tensor d({dlogits.numel(), 1});
  std::copy(dlogits.data(), dlogits.data() + dlogits.numel(), d.data());
  return bn.backward(fc1.backward(relu_.backward(fc2.backward(d))));
}

std::vector<Param*> ScoreHead::params() {
  std::vector<Param*> out;
  for (Param* p : bn.params()) out.push_back(p);
  for (Param* p : fc1.params()) out.push_back(p);
  for (Param* p : fc2.params()) out.push_back(p);
  return out;
}

std::vector<NamedTensor> ScoreHead::state() { return bn.state(); }

PairMatcher::PairMatcher(const std::string& name, int channels_, int feat_h_, int feat_w_,
                         const MatcherConfig& mc)
    : head(name + ".head", feat_h_ * feat_w_),
      channels(channels_),
      feat_h(feat_h_),
      feat_w(feat_w_),
      mc_(mc) {}

void PairMatcher::init(Rng& rng) { head.init(rng); }

Tensor PairMatcher::quality_batch(const std::vector<BodyMask>& masks) const {
  const int64_t b = static_cast<int64_t>(masks.size());
  const int64_t hw = static_cast<int64_t>(feat_h) * feat_w;
  Tensor q({b, hw});
  for (int64_t i = 0; i < b; ++i) {
    QualityMap qm = mc_.quality_weights ? compute_quality_weights(masks[i], feat_h, feat_w)
                                        : uniform_quality(feat_h, feat_w);
    std::copy(qm.q.begin(), qm.q.end(), q.data() + i * hw);
  }
  return q;
}

Tensor PairMatcher::forward(const Tensor& f, const Tensor& quality, bool train) {
  const auto& s = f.shape();
  if (s.size() != 4 || s[1] != channels || s[2] != feat_h || s[3] != feat_w)
    throw ValidationError("matcher expects (B," + std::to_string(channels) + "," +
                          std::to_string(feat_h) + "," + std::to_string(feat_w) + "), got " +
                          f.shape_str());
  const int64_t b = s[0];
  const int64_t hw = static_cast<int64_t>(feat_h) * feat_w;
  if (quality.ndim() != 2 || quality.dim(0) != b || quality.dim(1) != hw)
    throw ValidationError("quality batch shape mismatch: " + quality.shape_str());
  batch_ = b;
  quality_ = quality;

  npix_ = Tensor::zeros({b, hw, channels});
  norms_ = Tensor::zeros({b, hw});
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < b; ++i) {
    kernels::normalize_pixels(f.data() + i * channels * hw, channels, hw,
                              npix_.data() + i * hw * channels, norms_.data() + i * hw);
  }

  Tensor v({b * b, 2 * hw});
#pragma omp parallel
  {
    std::vector<double> s1(static_cast<size_t>(hw) * hw), s2(static_cast<size_t>(hw) * hw);
#pragma omp for schedule(static)
    for (int64_t pair = 0; pair < b * b; ++pair) {
      const int64_t i = pair / b, j = pair % b;
      kernels::sim1_pair(npix_.data() + i * hw * channels, quality_.data() + i * hw,
                         npix_.data() + j * hw * channels, quality_.data() + j * hw, hw, channels,
                         s1.data());
      kernels::bidirectional_pair(s1.data(), hw, nullptr, nullptr, s2.data());
      kernels::bigmp_pair(s2.data(), hw, v.data() + pair * 2 * hw, nullptr, nullptr);
    }
  }
  return head.forward(v, train);
}

namespace {

// Shared per-pair backward: recomputes the similarity chain for pair (i,j)
// and accumulates the gradient for one side only (side 0 = image i, 1 = j).
struct PairScratch {
  std::vector<double> s1, r_col, r_row, s2, ds1, ds2, col_dot, row_dot;
  std::vector<int> arg_row, arg_col;
  std::vector<double> v;

  explicit PairScratch(int64_t hw)
      : s1(hw * hw),
        r_col(hw * hw),
        r_row(hw * hw),
        s2(hw * hw),
        ds1(hw * hw),
        ds2(hw * hw),
        col_dot(hw),
        row_dot(hw),
        arg_row(hw),
        arg_col(hw),
        v(2 * hw) {}
};

void pair_backward_side(const double* n_i, const double* q_i, const double* n_j,
                        const double* q_j, const double* dv, int64_t hw, int64_t c, int side,
                        double* dn_out, PairScratch& sc) {
  kernels::sim1_pair(n_i, q_i, n_j, q_j, hw, c, sc.s1.data());
  kernels::bidirectional_pair(sc.s1.data(), hw, sc.r_col.data(), sc.r_row.data(), sc.s2.data());
  kernels::bigmp_pair(sc.s2.data(), hw, sc.v.data(), sc.arg_row.data(), sc.arg_col.data());

  std::fill(sc.ds2.begin(), sc.ds2.end(), 0.0);
  for (int64_t p = 0; p < hw; ++p) sc.ds2[p * hw + sc.arg_row[p]] += dv[p];
  for (int64_t q = 0; q < hw; ++q) sc.ds2[static_cast<int64_t>(sc.arg_col[q]) * hw + q] += dv[hw + q];

  // s2 = r_col * r_row elementwise; push through both softmaxes
  std::fill(sc.col_dot.begin(), sc.col_dot.end(), 0.0);
  std::fill(sc.row_dot.begin(), sc.row_dot.end(), 0.0);
  for (int64_t p = 0; p < hw; ++p) {
    for (int64_t q = 0; q < hw; ++q) {
      const double d = sc.ds2[p * hw + q];
      sc.col_dot[q] += sc.r_col[p * hw + q] * (d * sc.r_row[p * hw + q]);
      sc.row_dot[p] += sc.r_row[p * hw + q] * (d * sc.r_col[p * hw + q]);
    }
  }
  for (int64_t p = 0; p < hw; ++p) {
    for (int64_t q = 0; q < hw; ++q) {
      const double d = sc.ds2[p * hw + q];
      const double dcol = sc.r_col[p * hw + q] * (d * sc.r_row[p * hw + q] - sc.col_dot[q]);
      const double drow = sc.r_row[p * hw + q] * (d * sc.r_col[p * hw + q] - sc.row_dot[p]);
      sc.ds1[p * hw + q] = dcol + drow;
    }
  }

  // dsim1 -> normalized-pixel gradient for the requested side; the mean-1
  // weight rescaling applied in sim1_pair shows up here as the hw^2 factor
  const double scale = static_cast<double>(hw) * static_cast<double>(hw);
  if (side == 0) {
    for (int64_t p = 0; p < hw; ++p) {
      double* dst = dn_out + p * c;
      for (int64_t q = 0; q < hw; ++q) {
        const double g = scale * q_i[p] * q_j[q] * sc.ds1[p * hw + q];
        if (g == 0.0) continue;
        const double* src = n_j + q * c;
        for (int64_t k = 0; k < c; ++k) dst[k] += g * src[k];
      }
    }
  } else {
    for (int64_t q = 0; q < hw; ++q) {
      double* dst = dn_out + q * c;
      for (int64_t p = 0; p < hw; ++p) {
        const double g = scale * q_i[p] * q_j[q] * sc.ds1[p * hw + q];
        if (g == 0.0) continue;
        const double* src = n_i + p * c;
        for (int64_t k = 0; k < c; ++k) dst[k] += g * src[k];
      }
    }
  }
}

}  // namespace

Tensor PairMatcher::backward(const Tensor& dlogits) {
  const int64_t b = batch_;
  const int64_t hw = static_cast<int64_t>(feat_h) * feat_w;
  const int64_t c = channels;
  if (dlogits.numel() != b * b)
    throw ValidationError("matcher backward expects " + std::to_string(b * b) + " pair grads");
  Tensor dv = head.backward(dlogits);  // (B*B, 2*hw)

  Tensor df = Tensor::zeros({b, c, static_cast<int64_t>(feat_h), static_cast<int64_t>(feat_w)});
#pragma omp parallel
  {
    PairScratch sc(hw);
    std::vector<double> dn(static_cast<size_t>(hw) * c);
#pragma omp for schedule(static)
    for (int64_t img = 0; img < b; ++img) {
      std::fill(dn.begin(), dn.end(), 0.0);
      const double* n_b = npix_.data() + img * hw * c;
      const double* q_b = quality_.data() + img * hw;
      for (int64_t j = 0; j < b; ++j) {
        pair_backward_side(n_b, q_b, npix_.data() + j * hw * c, quality_.data() + j * hw,
                           dv.data() + (img * b + j) * 2 * hw, hw, c, 0, dn.data(), sc);
      }
      for (int64_t i = 0; i < b; ++i) {
        pair_backward_side(npix_.data() + i * hw * c, quality_.data() + i * hw, n_b, q_b,
                           dv.data() + (i * b + img) * 2 * hw, hw, c, 1, dn.data(), sc);
      }
      // unit-normalization backward per pixel
      for (int64_t p = 0; p < hw; ++p) {
        const double nu = norms_[img * hw + p];
        if (nu == 0.0) continue;
        const double* n = npix_.data() + (img * hw + p) * c;
        const double* g = dn.data() + p * c;
        double dot = 0.0;
        for (int64_t k = 0; k < c; ++k) dot += n[k] * g[k];
        for (int64_t k = 0; k < c; ++k) df[((img * c + k) * hw) + p] = (g[k] - n[k] * dot) / nu;
      }
    }
  }
  return df;
}

Tensor PairMatcher::score_pairs(const Tensor& f_query, const Tensor& q_query,
                                const Tensor& f_gallery, const Tensor& q_gallery) {
  const int64_t nq = f_query.dim(0), ng = f_gallery.dim(0);
  const int64_t hw = static_cast<int64_t>(feat_h) * feat_w;
  const int64_t c = channels;

  Tensor nq_pix = Tensor::zeros({nq, hw, c}), nq_norm = Tensor::zeros({nq, hw});
  Tensor ng_pix = Tensor::zeros({ng, hw, c}), ng_norm = Tensor::zeros({ng, hw});
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < nq; ++i)
    kernels::normalize_pixels(f_query.data() + i * c * hw, c, hw, nq_pix.data() + i * hw * c,
                              nq_norm.data() + i * hw);
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < ng; ++i)
    kernels::normalize_pixels(f_gallery.data() + i * c * hw, c, hw, ng_pix.data() + i * hw * c,
                              ng_norm.data() + i * hw);

  Tensor scores({nq, ng});
  const int64_t total = nq * ng;
  const int64_t chunk = 512;
  for (int64_t start = 0; start < total; start += chunk) {
    const int64_t count = std::min(chunk, total - start);
    Tensor v({count, 2 * hw});
#pragma omp parallel
    {
      std::vector<double> s1(static_cast<size_t>(hw) * hw), s2(static_cast<size_t>(hw) * hw);
#pragma omp for schedule(static)
      for (int64_t r = 0; r < count; ++r) {
        const int64_t pair = start + r;
        const int64_t qi = pair / ng, gi = pair % ng;
        kernels::sim1_pair(nq_pix.data() + qi * hw * c, q_query.data() + qi * hw,
                           ng_pix.data() + gi * hw * c, q_gallery.data() + gi * hw, hw, c,
                           s1.data());
        kernels::bidirectional_pair(s1.data(), hw, nullptr, nullptr, s2.data());
        kernels::bigmp_pair(s2.data(), hw, v.data() + r * 2 * hw, nullptr, nullptr);
      }
    }
    Tensor logits = head.forward(v, false);
    for (int64_t r = 0; r < count; ++r) scores[start + r] = sigmoid_scalar(logits[r]);
  }
  return scores;
}

std::vector<Param*> PairMatcher::params() { return head.params(); }

std::vector<NamedTensor> PairMatcher::state() { return head.state(); }

std::vector<double> match_pair_vector(const Tensor& f1, const QualityMap& q1, const Tensor& f2,
                                      const QualityMap& q2) {
  return bi_gmp(bidirectional_similarity(pixel_similarity(f1, q1, f2, q2)));
}

double match_pair(const Tensor& f1, const BodyMask& m1, const Tensor& f2, const BodyMask& m2,
                  ScoreHead& head, const MatcherConfig& mc) {
  if (f1.ndim() != 3) throw ValidationError("match_pair expects (C,H,W) features");
  const int h = static_cast<int>(f1.dim(1)), w = static_cast<int>(f1.dim(2));
  QualityMap q1 = mc.quality_weights ? compute_quality_weights(m1, h, w) : uniform_quality(h, w);
  QualityMap q2 = mc.quality_weights ? compute_quality_weights(m2, h, w) : uniform_quality(h, w);
  std::vector<double> vec = match_pair_vector(f1, q1, f2, q2);
  Tensor v({1, static_cast<int64_t>(vec.size())});
  std::copy(vec.begin(), vec.end(), v.data());
  Tensor logit = head.forward(v, false);
  return sigmoid_scalar(logit[0]);
}

}  // namespace qareid

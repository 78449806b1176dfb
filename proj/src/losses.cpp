#include "qareid/losses.hpp"

#include <algorithm>
#include <cmath>

#include "qareid/errors.hpp"

namespace qareid {

Tensor BatchLabels::pair_matrix() const {
  const int b = size();
  Tensor y({b, b});
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < b; ++j) y.at(i, j) = same(i, j) ? 1.0 : 0.0;
  return y;
}

double classification_loss(const Tensor& logits, const std::vector<int>& ids, Tensor* dlogits) {
  const int64_t b = logits.dim(0), p = logits.dim(1);
  if (static_cast<int64_t>(ids.size()) != b)
    throw ValidationError("classification loss: batch size mismatch");
  for (int id : ids) {
    if (id < 0 || id >= p)
      throw ValidationError("classification loss: id " + std::to_string(id) + " outside 0.." +
                            std::to_string(p - 1));
  }
  if (dlogits && !dlogits->same_shape(logits)) *dlogits = Tensor::zeros(logits.shape());

  double loss = 0.0;
  for (int64_t i = 0; i < b; ++i) {
    const double* row = logits.data() + i * p;
    double mx = row[0];
    for (int64_t k = 1; k < p; ++k) mx = std::max(mx, row[k]);
    double denom = 0.0;
    for (int64_t k = 0; k < p; ++k) denom += std::exp(row[k] - mx);
    const double lse = mx + std::log(denom);
    loss += lse - row[ids[i]];
    if (dlogits) {
      double* drow = dlogits->data() + i * p;
      for (int64_t k = 0; k < p; ++k) {
        double soft = std::exp(row[k] - mx) / denom;
        drow[k] += (soft - (k == ids[i] ? 1.0 : 0.0)) / b;
      }
    }
  }
  return loss / b;
}

TripletResult triplet_loss(const Tensor& embeddings, const std::vector<int>& ids, double margin,
                           Tensor* dembed) {
  const int64_t b = embeddings.dim(0), d = embeddings.dim(1);
  if (static_cast<int64_t>(ids.size()) != b)
    throw ValidationError("triplet loss: batch size mismatch");
  if (dembed && !dembed->same_shape(embeddings)) *dembed = Tensor::zeros(embeddings.shape());

  // pairwise Euclidean distances
  Tensor dist({b, b});
  for (int64_t i = 0; i < b; ++i) {
    dist.at(i, i) = 0.0;
    for (int64_t j = i + 1; j < b; ++j) {
      double s = 0.0;
      for (int64_t k = 0; k < d; ++k) {
        const double diff = embeddings.at(i, k) - embeddings.at(j, k);
        s += diff * diff;
      }
      const double dd = std::sqrt(s);
      dist.at(i, j) = dd;
      dist.at(j, i) = dd;
    }
  }

  struct Pick {
    int64_t pos = -1, neg = -1;
    bool active = false;
  };
  std::vector<Pick> picks(b);
  double loss = 0.0;
  int64_t counted = 0;
  for (int64_t a = 0; a < b; ++a) {
    double hp = -1.0;
    int64_t hp_idx = -1;
    double hn = 1e300;
    int64_t hn_idx = -1;
    for (int64_t o = 0; o < b; ++o) {
      if (ids[o] == ids[a]) {
        if (dist.at(a, o) > hp) {
          hp = dist.at(a, o);
          hp_idx = o;
        }
      } else if (dist.at(a, o) < hn) {
        hn = dist.at(a, o);
        hn_idx = o;
      }
    }
    if (hn_idx < 0) continue;  // anchor has no negative in this batch
    ++counted;
    const double hinge = margin + hp - hn;
    if (hinge > 0.0) {
      loss += hinge;
      picks[a] = {hp_idx, hn_idx, true};
    }
  }
  if (counted == 0) return {0.0, false};
  loss /= counted;

  if (dembed) {
    for (int64_t a = 0; a < b; ++a) {
      if (!picks[a].active) continue;
      const int64_t p = picks[a].pos, n = picks[a].neg;
      const double dp = dist.at(a, p), dn = dist.at(a, n);
      for (int64_t k = 0; k < d; ++k) {
        if (dp > 0.0) {
          const double g = (embeddings.at(a, k) - embeddings.at(p, k)) / (dp * counted);
          dembed->at(a, k) += g;
          dembed->at(p, k) -= g;
        }
        if (dn > 0.0) {
          const double g = (embeddings.at(a, k) - embeddings.at(n, k)) / (dn * counted);
          dembed->at(a, k) -= g;
          dembed->at(n, k) += g;
        }
      }
    }
  }
  return {loss, true};
}

namespace {
constexpr double kClamp = 1e-7;

int64_t pair_denominator(int64_t b, const MatchLossConfig& cfg) {
  if (cfg.include_diagonal) return b * b;
  if (b < 2) throw ValidationError("matching loss without the diagonal needs batch size >= 2");
  return b * b - b;
}
}  // namespace

double matching_loss(const Tensor& p, const BatchLabels& labels, const MatchLossConfig& cfg,
                     Tensor* dp) {
  const int64_t b = labels.size();
  if (p.ndim() != 2 || p.dim(0) != b || p.dim(1) != b)
    throw ValidationError("matching loss expects (B,B) scores");
  if (dp && !dp->same_shape(p)) *dp = Tensor::zeros(p.shape());
  const double denom = static_cast<double>(pair_denominator(b, cfg));

  double loss = 0.0;
  for (int64_t i = 0; i < b; ++i) {
    for (int64_t j = 0; j < b; ++j) {
      if (!cfg.include_diagonal && i == j) continue;
      const double y = labels.same(static_cast<int>(i), static_cast<int>(j)) ? 1.0 : 0.0;
      const double pc = std::clamp(p.at(i, j), kClamp, 1.0 - kClamp);
      loss -= y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc);
      if (dp) dp->at(i, j) += (pc - y) / (denom * pc * (1.0 - pc));
    }
  }
  return loss / denom;
}

double matching_loss_from_logits(const Tensor& logits, const BatchLabels& labels,
                                 const MatchLossConfig& cfg, Tensor* dlogits) {
  const int64_t b = labels.size();
  if (logits.numel() != b * b)
    throw ValidationError("matching loss expects B*B logits, got " +
                          std::to_string(logits.numel()));
  if (dlogits && !dlogits->same_shape(logits)) *dlogits = Tensor::zeros(logits.shape());
  const double denom = static_cast<double>(pair_denominator(b, cfg));

  double loss = 0.0;
  for (int64_t i = 0; i < b; ++i) {
    for (int64_t j = 0; j < b; ++j) {
      if (!cfg.include_diagonal && i == j) continue;
      const double y = labels.same(static_cast<int>(i), static_cast<int>(j)) ? 1.0 : 0.0;
      const double prob = 1.0 / (1.0 + std::exp(-logits[i * b + j]));
      const double pc = std::clamp(prob, kClamp, 1.0 - kClamp);
      loss -= y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc);
      if (dlogits) (*dlogits)[i * b + j] += (prob - y) / denom;
    }
  }
  return loss / denom;
}

LossBreakdown combine_losses(double cls_rgb, double cls_par, double tri_rgb, double tri_par,
                             double match, double cls_fuse, double tri_fuse) {
  LossBreakdown out;
  out.cls_rgb = cls_rgb;
  out.cls_par = cls_par;
  out.tri_rgb = tri_rgb;
  out.tri_par = tri_par;
  out.match = match;
  out.cls_fuse = cls_fuse;
  out.tri_fuse = tri_fuse;
  out.total = cls_rgb + cls_par + tri_rgb + tri_par + match + cls_fuse + tri_fuse;
  return out;
}

}  // namespace qareid

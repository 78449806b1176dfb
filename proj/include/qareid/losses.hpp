#pragma once

#include <vector>

#include "qareid/tensor.hpp"

namespace qareid {

// Per-batch identity labels plus the induced same-person pair matrix.
struct BatchLabels {
  std::vector<int> person_ids;

  int size() const { return static_cast<int>(person_ids.size()); }
  bool same(int i, int j) const { return person_ids[i] == person_ids[j]; }
  Tensor pair_matrix() const;  // (B,B) of {0,1}, symmetric, unit diagonal
};

// Mean cross-entropy of logits (B,P) against integer ids. When dlogits is
// non-null it receives (softmax - onehot)/B.
double classification_loss(const Tensor& logits, const std::vector<int>& ids,
                           Tensor* dlogits = nullptr);

struct TripletResult {
  double value = 0.0;
  bool valid = false;  // false when no anchor had both a positive and a negative
};

// Batch-hard triplet loss with Euclidean distances: per anchor, hardest
// positive (same id, self included) minus hardest negative, hinged at the
// margin, averaged over anchors that have at least one negative. Accumulates
// into *dembed when given.
TripletResult triplet_loss(const Tensor& embeddings, const std::vector<int>& ids, double margin,
                           Tensor* dembed = nullptr);

struct MatchLossConfig {
  bool include_diagonal = true;  // self pairs count in the double sum
};

// Pairwise binary cross-entropy over all ordered pairs; p is (B,B) of
// probabilities, clamped to [1e-7, 1-1e-7]. dp gets the analytic gradient
// (p-y)/(denom*p*(1-p)) when non-null.
double matching_loss(const Tensor& p, const BatchLabels& labels, const MatchLossConfig& cfg = {},
                     Tensor* dp = nullptr);

// Same loss from pre-sigmoid logits (B*B flat, pair (i,j) at i*B+j); the
// fused gradient (p-y)/denom lands in dlogits.
double matching_loss_from_logits(const Tensor& logits, const BatchLabels& labels,
                                 const MatchLossConfig& cfg = {}, Tensor* dlogits = nullptr);

struct LossBreakdown {
  double cls_rgb = 0.0, cls_par = 0.0;
  double tri_rgb = 0.0, tri_par = 0.0;
  double match = 0.0;
  // populated only by the no-matching ablation, zero otherwise
  double cls_fuse = 0.0, tri_fuse = 0.0;
  double total = 0.0;
};

// Unweighted sum of the parts.
LossBreakdown combine_losses(double cls_rgb, double cls_par, double tri_rgb, double tri_par,
                             double match, double cls_fuse = 0.0, double tri_fuse = 0.0);

}  // namespace qareid

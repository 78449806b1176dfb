#pragma once

#include <string>
#include <vector>

#include "qareid/layers.hpp"
#include "qareid/parsing.hpp"
#include "qareid/tensor.hpp"

namespace qareid {

// Per-position matching weights for one image: block-averaged mask occupancy
// softmaxed over all H*W positions. Entries are strictly positive and sum
// to 1.
struct QualityMap {
  int h = 0, w = 0;
  std::vector<double> q;
};

// The block size k = floor(mask_h/out_h) must equal floor(mask_w/out_w) and
// be at least 1; mask rows/columns beyond out_h*k / out_w*k are ignored.
QualityMap compute_quality_weights(const BodyMask& mask, int out_h, int out_w);

// Uniform 1/(H*W) map, used when quality weighting is disabled.
QualityMap uniform_quality(int out_h, int out_w);

// Single-pair operations; f1/f2 are (C,H,W) feature maps.
// sim1[(p),(q)] = (HW*Q1(p)) * (HW*Q2(q)) * cos(f1_p, f2_q); zero-norm pixels
// get cos 0. The HW factors give the weights mean 1 so sim1 stays O(1) at any
// grid size and the bidirectional softmaxes keep contrast.
Tensor pixel_similarity(const Tensor& f1, const QualityMap& q1, const Tensor& f2,
                        const QualityMap& q2);
// Product of the per-column softmax over image-1 positions and the per-row
// softmax over image-2 positions.
Tensor bidirectional_similarity(const Tensor& sim1);
// Row maxima then column maxima, concatenated (image-1 half first, row-major).
std::vector<double> bi_gmp(const Tensor& sim2);

// BN over the 2*H*W pooled similarities, then a one-hidden-layer MLP and a
// sigmoid. forward returns logits; apply sigmoid_scalar for probabilities.
class ScoreHead {
 public:
  ScoreHead(const std::string& name, int hw, int hidden = 64);
  void init(Rng& rng);
  Tensor forward(const Tensor& v, bool train);  // (N,2*hw) -> (N)
  Tensor backward(const Tensor& dlogits);       // (N) -> (N,2*hw)
  std::vector<Param*> params();
  std::vector<NamedTensor> state();

  BatchNorm bn;
  Linear fc1, fc2;
  int hw;

 private:
  ReLU relu_;
};

struct MatcherConfig {
  bool quality_weights = true;
};

// Batched all-pairs matcher used in training and retrieval. The similarity
// tensors are never stashed: backward recomputes each pair from the
// normalized pixels, once per side, so memory stays O(B^2 * H*W).
class PairMatcher {
 public:
  PairMatcher(const std::string& name, int channels, int feat_h, int feat_w,
              const MatcherConfig& mc);
  void init(Rng& rng);

  // f: (B,C,H,W) fused features; quality: (B,H*W) per-image weights.
  // Returns logits for all ordered pairs, (B*B) with pair (i,j) at i*B+j.
  Tensor forward(const Tensor& f, const Tensor& quality, bool train);
  // dlogits (B*B) -> gradient w.r.t. f.
  Tensor backward(const Tensor& dlogits);

  // Retrieval scoring, eval mode: probabilities (Nq, Ng).
  Tensor score_pairs(const Tensor& f_query, const Tensor& q_query, const Tensor& f_gallery,
                     const Tensor& q_gallery);

  // Quality maps for a batch of masks at this matcher's grid, honoring the
  // quality_weights switch.
  Tensor quality_batch(const std::vector<BodyMask>& masks) const;

  std::vector<Param*> params();
  std::vector<NamedTensor> state();

  ScoreHead head;
  int channels, feat_h, feat_w;

 private:
  MatcherConfig mc_;
  int64_t batch_ = 0;
  Tensor npix_, norms_, quality_;  // (B,HW,C), (B,HW), (B,HW)
};

// One-shot composition used by the pair-scoring CLI and tests: quality maps
// from the masks, pixel similarities, bidirectional map, Bi-GMP, score head
// in eval mode. Masks are at image resolution; features at (C,H,W).
double match_pair(const Tensor& f1, const BodyMask& m1, const Tensor& f2, const BodyMask& m2,
                  ScoreHead& head, const MatcherConfig& mc);

// The Bi-GMP vector of a pair, exposed for the symmetry contracts.
std::vector<double> match_pair_vector(const Tensor& f1, const QualityMap& q1, const Tensor& f2,
                                      const QualityMap& q2);

}  // namespace qareid

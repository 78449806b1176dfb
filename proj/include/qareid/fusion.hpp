#pragma once

#include <string>
#include <utility>
#include <vector>

#include "qareid/layers.hpp"

namespace qareid {

// Channel and spatial attention over the concatenated branch features,
// combined into one broadcast product map in [0,1].
//
// Channel side: global average and global max pooling of the 2C concatenated
// channels feed a shared two-layer bottleneck (ratio 16); the two outputs are
// summed and squashed. Spatial side: channel mean and channel max form a
// 2-plane map passed through a 7x7 conv and squashed.
class MultiModalAttention {
 public:
  MultiModalAttention(const std::string& name, int channels);
  void init(Rng& rng);

  // Both inputs (N,C,H,W); returns omega (N,C,H,W), stashing for backward.
  Tensor forward(const Tensor& f_rgb, const Tensor& f_par);
  // Accumulates feature gradients of omega's producers into df_rgb / df_par.
  void backward(const Tensor& domega, Tensor& df_rgb, Tensor& df_par);

  std::vector<Param*> params();

  const Tensor& channel_map() const { return channel_; }  // (N,C)
  const Tensor& spatial_map() const { return spatial_; }  // (N,1,H,W)

  Param mlp_w1, mlp_b1, mlp_w2, mlp_b2;
  Conv2d spatial_conv;

 private:
  int c_;
  int hidden_;
  int64_t n_ = 0, h_ = 0, w_ = 0;
  Tensor avg_, mx_;          // (N,2C) pooled inputs
  std::vector<int64_t> mx_arg_;
  Tensor ha_pre_, hm_pre_;   // (N,hidden) bottleneck pre-activations
  Tensor channel_;           // (N,C) post-squash
  Tensor spatial_;           // (N,1,H,W) post-squash
  std::vector<int32_t> smax_arg_;  // winning concat channel per (n,h,w)
};

// F_mix = omega*F_rgb + (1-omega)*F_par, F = F_rgb + F_par + F_mix,
// then a width-preserving 1x1 conv.
class FusionModule {
 public:
  FusionModule(const std::string& name, int channels);
  void init(Rng& rng);

  Tensor forward(const Tensor& f_rgb, const Tensor& f_par, const Tensor& omega);
  // Accumulates into df_rgb/df_par/domega.
  void backward(const Tensor& dfuse, Tensor& df_rgb, Tensor& df_par, Tensor& domega);

  std::vector<Param*> params();

  const Tensor& mix() const { return mix_; }  // (N,C,H,W) before the residual sum
  const Tensor& sum() const { return sum_; }

  Conv2d conv1x1;

 private:
  Tensor f_rgb_, f_par_, omega_, mix_, sum_;
};

// Global average pooling followed by batch normalization. The pre-norm
// embedding feeds the metric loss, the post-norm one the classifier.
class EmbedHead {
 public:
  EmbedHead(const std::string& name, int channels);

  // returns {pre-norm, post-norm}, each (N,C)
  std::pair<Tensor, Tensor> forward(const Tensor& fmap, bool train);
  // d_pre and d_post may be empty tensors when unused
  Tensor backward(const Tensor& d_pre, const Tensor& d_post);

  std::vector<Param*> params();
  std::vector<NamedTensor> state();

  BatchNorm bn;

 private:
  int64_t h_ = 0, w_ = 0;
};

// Bias-free linear classifier over post-norm embeddings.
class Classifier {
 public:
  Classifier(const std::string& name, int channels, int n_classes);
  void init(Rng& rng);
  Tensor forward(const Tensor& embed);   // (N,n_classes) logits
  Tensor backward(const Tensor& dlogits);
  std::vector<Param*> params();

  Linear fc;
};

}  // namespace qareid

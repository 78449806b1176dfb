#pragma once

#include <memory>
#include <string>
#include <vector>

#include "qareid/layers.hpp"

namespace qareid {

enum class BackboneVariant { kToy, kFull };

BackboneVariant backbone_variant_from_name(const std::string& name);
const char* backbone_variant_name(BackboneVariant v);
int backbone_stride(BackboneVariant v);    // 8 toy, 16 full
int backbone_channels(BackboneVariant v);  // 64 toy, 1024 full

struct BackboneConfig {
  BackboneVariant variant = BackboneVariant::kToy;
  int input_h = 64;
  int input_w = 32;
};

// The tap-point stride must divide the input resolution exactly.
void validate_backbone_config(const BackboneConfig& cfg);

// Three conv-bn-relu stages, each halving the resolution: 3->16->32->64,
// total stride 8. Small enough to train on a CPU while keeping the same
// mid-network tap semantics as the full variant.
class ToyBackbone {
 public:
  static constexpr int kChannels[3] = {16, 32, 64};

  explicit ToyBackbone(const std::string& name);
  void init(Rng& rng);
  Tensor forward(const Tensor& x, bool train);
  Tensor backward(const Tensor& dy);
  std::vector<Param*> params();
  std::vector<NamedTensor> state();

 private:
  Conv2d c1_, c2_, c3_;
  BatchNorm b1_, b2_, b3_;
  ReLU r1_, r2_, r3_;
};

class Bottleneck {
 public:
  Bottleneck(const std::string& name, int in_ch, int planes, int stride);
  void init(Rng& rng);
  Tensor forward(const Tensor& x, bool train);
  Tensor backward(const Tensor& dy);
  std::vector<Param*> params();
  std::vector<NamedTensor> state();

 private:
  Conv2d conv1_, conv2_, conv3_;
  BatchNorm bn1_, bn2_, bn3_;
  ReLU relu1_, relu2_, relu3_;
  std::unique_ptr<Conv2d> down_conv_;
  std::unique_ptr<BatchNorm> down_bn_;
  Tensor x_;
};

// 50-layer residual network truncated after its third bottleneck stage:
// 7x7/2 stem, 3x3/2 max pool, then 3+4+6 bottlenecks. Output is 1024
// channels at 1/16 resolution.
class ResNet50Stage3 {
 public:
  explicit ResNet50Stage3(const std::string& name);
  void init(Rng& rng);
  Tensor forward(const Tensor& x, bool train);
  Tensor backward(const Tensor& dy);
  std::vector<Param*> params();
  std::vector<NamedTensor> state();

 private:
  Conv2d stem_;
  BatchNorm stem_bn_;
  ReLU stem_relu_;
  MaxPool2d pool_;
  std::vector<std::unique_ptr<Bottleneck>> blocks_;
};

// Variant dispatch plus input-shape checking.
class Backbone {
 public:
  Backbone(const BackboneConfig& cfg, const std::string& name);
  void init(Rng& rng);
  Tensor forward(const Tensor& x, bool train);
  Tensor backward(const Tensor& dy);
  std::vector<Param*> params();
  std::vector<NamedTensor> state();
  int out_channels() const { return backbone_channels(cfg_.variant); }
  int stride() const { return backbone_stride(cfg_.variant); }
  int feat_h() const { return cfg_.input_h / stride(); }
  int feat_w() const { return cfg_.input_w / stride(); }

 private:
  BackboneConfig cfg_;
  std::unique_ptr<ToyBackbone> toy_;
  std::unique_ptr<ResNet50Stage3> full_;
};

}  // namespace qareid

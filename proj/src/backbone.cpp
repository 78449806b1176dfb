#include "qareid/backbone.hpp"

#include "qareid/errors.hpp"

namespace qareid {

BackboneVariant backbone_variant_from_name(const std::string& name) {
  if (name == "toy") return BackboneVariant::kToy;
  if (name == "full") return BackboneVariant::kFull;
  throw ConfigError("unknown backbone variant: " + name);
}

const char* backbone_variant_name(BackboneVariant v) {
  return v == BackboneVariant::kToy ? "toy" : "full";
}

int backbone_stride(BackboneVariant v) { return v == BackboneVariant::kToy ? 8 : 16; }

int backbone_channels(BackboneVariant v) { return v == BackboneVariant::kToy ? 64 : 1024; }

void validate_backbone_config(const BackboneConfig& cfg) {
  const int s = backbone_stride(cfg.variant);
  if (cfg.input_h < s || cfg.input_w < s)
    throw ConfigError("input resolution smaller than backbone stride");
  if (cfg.input_h % s != 0 || cfg.input_w % s != 0) {
    throw ConfigError("backbone stride " + std::to_string(s) + " must divide input resolution " +
                      std::to_string(cfg.input_h) + "x" + std::to_string(cfg.input_w));
  }
}

ToyBackbone::ToyBackbone(const std::string& name)
    : c1_(name + ".c1", 3, kChannels[0], 3, 2, 1),
      c2_(name + ".c2", kChannels[0], kChannels[1], 3, 2, 1),
      c3_(name + ".c3", kChannels[1], kChannels[2], 3, 2, 1),
      b1_(name + ".b1", kChannels[0]),
      b2_(name + ".b2", kChannels[1]),
      b3_(name + ".b3", kChannels[2]) {}

void ToyBackbone::init(Rng& rng) {
  c1_.init(rng);
  c2_.init(rng);
  c3_.init(rng);
}

Tensor ToyBackbone::forward(const Tensor& x, bool train) {
  Tensor h = r1_.forward(b1_.forward(c1_.forward(x), train));
  h = r2_.forward(b2_.forward(c2_.forward(h), train));
  return r3_.forward(b3_.forward(c3_.forward(h), train));
}

Tensor ToyBackbone::backward(const Tensor& dy) {
  Tensor d = c3_.backward(b3_.backward(r3_.backward(dy)));
  d = c2_.backward(b2_.backward(r2_.backward(d)));
  return c1_.backward(b1_.backward(r1_.backward(d)));
}

std::vector<Param*> ToyBackbone::params() {
  std::vector<Param*> out;
  for (auto* layer : {&c1_, &c2_, &c3_})
    for (Param* p : layer->params()) out.push_back(p);
  for (auto* layer : {&b1_, &b2_, &b3_})
    for (Param* p : layer->params()) out.push_back(p);
  return out;
}

std::vector<NamedTensor> ToyBackbone::state() {
  std::vector<NamedTensor> out;
  for (auto* layer : {&b1_, &b2_, &b3_})
    for (auto& s : layer->state()) out.push_back(s);
  return out;
}

Bottleneck::Bottleneck(const std::string& name, int in_ch, int planes, int stride)
    : conv1_(name + ".conv1", in_ch, planes, 1, 1, 0, false),
      conv2_(name + ".conv2", planes, planes, 3, stride, 1, false),
      conv3_(name + ".conv3", planes, planes * 4, 1, 1, 0, false),
      bn1_(name + ".bn1", planes),
      bn2_(name + ".bn2", planes),
      bn3_(name + ".bn3", planes * 4) {
  if (stride != 1 || in_ch != planes * 4) {
    down_conv_ = std::make_unique<Conv2d>(name + ".down", in_ch, planes * 4, 1, stride, 0, false);
    down_bn_ = std::make_unique<BatchNorm>(name + ".down_bn", planes * 4);
  }
}

void Bottleneck::init(Rng& rng) {
  conv1_.init(rng);
  conv2_.init(rng);
  conv3_.init(rng);
  if (down_conv_) down_conv_->init(rng);
}

Tensor Bottleneck::forward(const Tensor& x, bool train) {
  x_ = x;
  Tensor h = relu1_.forward(bn1_.forward(conv1_.forward(x), train));
  h = relu2_.forward(bn2_.forward(conv2_.forward(h), train));
  h = bn3_.forward(conv3_.forward(h), train);
  Tensor skip = down_conv_ ? down_bn_->forward(down_conv_->forward(x), train) : x;
  h.axpy(1.0, skip);
  return relu3_.forward(h);
}

Tensor Bottleneck::backward(const Tensor& dy) {
  Tensor d = relu3_.backward(dy);
  Tensor dmain = conv1_.backward(bn1_.backward(
      relu1_.backward(conv2_.backward(bn2_.backward(relu2_.backward(conv3_.backward(bn3_.backward(d))))))));
  Tensor dskip = down_conv_ ? down_conv_->backward(down_bn_->backward(d)) : d;
  dmain.axpy(1.0, dskip);
  return dmain;
}

std::vector<Param*> Bottleneck::params() {
  std::vector<Param*> out;
  for (auto* c : {&conv1_, &conv2_, &conv3_})
    for (Param* p : c->params()) out.push_back(p);
  for (auto* b : {&bn1_, &bn2_, &bn3_})
    for (Param* p : b->params()) out.push_back(p);
  if (down_conv_) {
    for (Param* p : down_conv_->params()) out.push_back(p);
    for (Param* p : down_bn_->params()) out.push_back(p);
  }
  return out;
}

std::vector<NamedTensor> Bottleneck::state() {
  std::vector<NamedTensor> out;
  for (auto* b : {&bn1_, &bn2_, &bn3_})
    for (auto& s : b->state()) out.push_back(s);
  if (down_bn_)
    for (auto& s : down_bn_->state()) out.push_back(s);
  return out;
}

ResNet50Stage3::ResNet50Stage3(const std::string& name)
    : stem_(name + ".stem", 3, 64, 7, 2, 3, false), stem_bn_(name + ".stem_bn", 64), pool_(3, 2, 1) {
  struct StageDef {
    int planes, blocks, stride;
  };
  const StageDef stages[3] = {{64, 3, 1}, {128, 4, 2}, {256, 6, 2}};
  int in_ch = 64;
  for (int s = 0; s < 3; ++s) {
    for (int b = 0; b < stages[s].blocks; ++b) {
      const int stride = b == 0 ? stages[s].stride : 1;
      std::string bname = name + ".layer" + std::to_string(s + 1) + "." + std::to_string(b);
      blocks_.push_back(std::make_unique<Bottleneck>(bname, in_ch, stages[s].planes, stride));
      in_ch = stages[s].planes * 4;
    }
  }
}

void ResNet50Stage3::init(Rng& rng) {
  stem_.init(rng);
  for (auto& b : blocks_) b->init(rng);
}

Tensor ResNet50Stage3::forward(const Tensor& x, bool train) {
  Tensor h = pool_.forward(stem_relu_.forward(stem_bn_.forward(stem_.forward(x), train)));
  for (auto& b : blocks_) h = b->forward(h, train);
  return h;
}

Tensor ResNet50Stage3::backward(const Tensor& dy) {
  Tensor d = dy;
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) d = (*it)->backward(d);
  return stem_.backward(stem_bn_.backward(stem_relu_.backward(pool_.backward(d))));
}

std::vector<Param*> ResNet50Stage3::params() {
  std::vector<Param*> out;
  for (Param* p : stem_.params()) out.push_back(p);
  for (Param* p : stem_bn_.params()) out.push_back(p);
  for (auto& b : blocks_)
    for (Param* p : b->params()) out.push_back(p);
  return out;
}

std::vector<NamedTensor> ResNet50Stage3::state() {
  std::vector<NamedTensor> out;
  for (auto& s : stem_bn_.state()) out.push_back(s);
  for (auto& b : blocks_)
    for (auto& s : b->state()) out.push_back(s);
  return out;
}

Backbone::Backbone(const BackboneConfig& cfg, const std::string& name) : cfg_(cfg) {
  validate_backbone_config(cfg);
  if (cfg.variant == BackboneVariant::kToy) {
    toy_ = std::make_unique<ToyBackbone>(name);
  } else {
    full_ = std::make_unique<ResNet50Stage3>(name);
  }
}

void Backbone::init(Rng& rng) {
  if (toy_) toy_->init(rng);
  if (full_) full_->init(rng);
}

Tensor Backbone::forward(const Tensor& x, bool train) {
  const auto& s = x.shape();
  if (s.size() != 4 || s[1] != 3 || s[2] != cfg_.input_h || s[3] != cfg_.input_w) {
    throw ValidationError("backbone expects (N,3," + std::to_string(cfg_.input_h) + "," +
                          std::to_string(cfg_.input_w) + ") input, got " + x.shape_str());
  }
  return toy_ ? toy_->forward(x, train) : full_->forward(x, train);
}

Tensor Backbone::backward(const Tensor& dy) {
  return toy_ ? toy_->backward(dy) : full_->backward(dy);
}

std::vector<Param*> Backbone::params() { return toy_ ? toy_->params() : full_->params(); }

std::vector<NamedTensor> Backbone::state() { return toy_ ? toy_->state() : full_->state(); }

}  // namespace qareid

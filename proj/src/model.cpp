#include "qareid/model.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>

#include "qareid/errors.hpp"

namespace qareid {

namespace {

std::string normalized(std::string s) {
  std::replace(s.begin(), s.end(), '-', '_');
  return s;
}

}  // namespace

AblationMode ablation_from_name(const std::string& name) {
  const std::string s = normalized(name);
  if (s == "rgb_only") return AblationMode::kRgbOnly;
  if (s == "no_match") return AblationMode::kNoMatch;
  if (s == "full") return AblationMode::kFull;
  throw ConfigError("unknown model mode '" + name + "' (expected rgb_only, no_match or full)");
}

const char* ablation_name(AblationMode m) {
  switch (m) {
    case AblationMode::kRgbOnly: return "rgb_only";
    case AblationMode::kNoMatch: return "no_match";
    default: return "full";
  }
}

Scorer scorer_from_name(const std::string& name) {
  const std::string s = normalized(name);
  if (s == "auto") return Scorer::kAuto;
  if (s == "match") return Scorer::kMatchProb;
  if (s == "embedding") return Scorer::kEmbedding;
  throw ConfigError("unknown scorer '" + name + "' (expected auto, match or embedding)");
}

const char* scorer_name(Scorer s) {
  switch (s) {
    case Scorer::kAuto: return "auto";
    case Scorer::kMatchProb: return "match";
    default: return "embedding";
  }
}

void validate_model_config(const ModelConfig& cfg) {
  validate_backbone_config(cfg.backbone);
  if (cfg.num_classes < 1)
    throw ConfigError("model needs at least one identity class, got " +
                      std::to_string(cfg.num_classes));
  if (cfg.identity_labels.labels.empty())
    throw ConfigError("identity label set must not be empty");
  if (cfg.scorer == Scorer::kMatchProb && cfg.mode != AblationMode::kFull)
    throw ConfigError("match-probability scoring needs the full model, mode is " +
                      std::string(ablation_name(cfg.mode)));
}

Scorer effective_scorer(const ModelConfig& cfg) {
  if (cfg.scorer == Scorer::kAuto)
    return cfg.mode == AblationMode::kFull ? Scorer::kMatchProb : Scorer::kEmbedding;
  return cfg.scorer;
}

nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  return nlohmann::json{{"backbone", backbone_variant_name(cfg.backbone.variant)},
                        {"input", {cfg.backbone.input_h, cfg.backbone.input_w}},
                        {"num_classes", cfg.num_classes},
                        {"identity_labels", cfg.identity_labels.labels},
                        {"mode", ablation_name(cfg.mode)},
                        {"quality_weights", cfg.quality_weights},
                        {"scorer", scorer_name(cfg.scorer)}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> kKeys = {
      "backbone", "input", "num_classes", "identity_labels", "mode", "quality_weights", "scorer"};
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  for (const auto& item : j.items()) {
    if (std::find(kKeys.begin(), kKeys.end(), item.key()) == kKeys.end())
      throw ConfigError("unknown model config key '" + item.key() + "'");
  }
  ModelConfig cfg;
  if (j.contains("backbone"))
    cfg.backbone.variant = backbone_variant_from_name(j.at("backbone").get<std::string>());
  if (j.contains("input")) {
    const auto& in = j.at("input");
    if (!in.is_array() || in.size() != 2)
      throw ConfigError("model input must be a [height, width] pair");
    cfg.backbone.input_h = in[0].get<int>();
    cfg.backbone.input_w = in[1].get<int>();
  }
  if (j.contains("num_classes")) cfg.num_classes = j.at("num_classes").get<int>();
  if (j.contains("identity_labels")) {
    const auto& arr = j.at("identity_labels");
    if (!arr.is_array() || arr.empty())
      throw ConfigError("identity_labels must be a non-empty array");
    if (arr[0].is_string())
      cfg.identity_labels = LabelSet::from_names(arr.get<std::vector<std::string>>());
    else
      cfg.identity_labels = LabelSet::from_ints(arr.get<std::vector<int>>());
  }
  if (j.contains("mode")) cfg.mode = ablation_from_name(j.at("mode").get<std::string>());
  if (j.contains("quality_weights")) cfg.quality_weights = j.at("quality_weights").get<bool>();
  if (j.contains("scorer")) cfg.scorer = scorer_from_name(j.at("scorer").get<std::string>());
  return cfg;
}

Batch make_batch(const std::vector<const SampleRecord*>& samples, const LabelSet& labels) {
  if (samples.empty()) throw ValidationError("empty batch");
  const int h = samples[0]->image.h, w = samples[0]->image.w;
  const int b = static_cast<int>(samples.size());
  Batch batch;
  batch.rgb = Tensor::zeros({b, 3, h, w});
  batch.par = Tensor::zeros({b, 3, h, w});
  batch.masks.resize(b);
  batch.person_ids.resize(b);
  for (int i = 0; i < b; ++i) {
    const SampleRecord& s = *samples[i];
    if (s.image.h != h || s.image.w != w)
      throw ValidationError("batch mixes image resolutions: " + std::to_string(h) + "x" +
                            std::to_string(w) + " vs " + std::to_string(s.image.h) + "x" +
                            std::to_string(s.image.w));
    batch.masks[i] = build_body_mask(s.seg, labels);
    batch.person_ids[i] = s.person_id;
    const Image par = apply_mask(s.image, batch.masks[i]);
    for (int c = 0; c < 3; ++c)
      for (int r = 0; r < h; ++r)
        for (int col = 0; col < w; ++col) {
          batch.rgb.at(i, c, r, col) = s.image.at(r, col, c);
          batch.par.at(i, c, r, col) = par.at(r, col, c);
        }
  }
  return batch;
}

QAReidModel::QAReidModel(const ModelConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
  validate_model_config(cfg);
  const int c = backbone_channels(cfg.backbone.variant);
  backbone_rgb_ = std::make_unique<Backbone>(cfg.backbone, "backbone_rgb");
  head_rgb_ = std::make_unique<EmbedHead>("embed_rgb", c);
  cls_rgb_ = std::make_unique<Classifier>("cls_rgb", c, cfg.num_classes);
  if (cfg.mode != AblationMode::kRgbOnly) {
    backbone_par_ = std::make_unique<Backbone>(cfg.backbone, "backbone_par");
    attention_ = std::make_unique<MultiModalAttention>("attention", c);
    fusion_ = std::make_unique<FusionModule>("fusion", c);
    head_par_ = std::make_unique<EmbedHead>("embed_par", c);
    cls_par_ = std::make_unique<Classifier>("cls_par", c, cfg.num_classes);
    head_fuse_ = std::make_unique<EmbedHead>("embed_fuse", c);
  }
  if (cfg.mode == AblationMode::kNoMatch) {
    cls_fuse_ = std::make_unique<Classifier>("cls_fuse", c, cfg.num_classes);
  }
  if (cfg.mode == AblationMode::kFull) {
    MatcherConfig mc;
    mc.quality_weights = cfg.quality_weights;
    matcher_ = std::make_unique<PairMatcher>("matcher", c, backbone_rgb_->feat_h(),
                                             backbone_rgb_->feat_w(), mc);
  }

  Rng root(Rng::mix(init_seed, 0x6d6f64656cull));
  Rng r0 = root.fork(0);
  backbone_rgb_->init(r0);
  Rng r1 = root.fork(1);
  cls_rgb_->init(r1);
  if (backbone_par_) {
    Rng r2 = root.fork(2);
    backbone_par_->init(r2);
    Rng r3 = root.fork(3);
    attention_->init(r3);
    Rng r4 = root.fork(4);
    fusion_->init(r4);
    Rng r5 = root.fork(5);
    cls_par_->init(r5);
  }
  if (cls_fuse_) {
    Rng r6 = root.fork(6);
    cls_fuse_->init(r6);
  }
  if (matcher_) {
    Rng r7 = root.fork(7);
    matcher_->init(r7);
  }
}

LossBreakdown QAReidModel::forward_backward(const Batch& batch, double triplet_margin,
                                            const MatchLossConfig& match_cfg) {
  const BatchLabels labels{batch.person_ids};

  Tensor f_rgb = backbone_rgb_->forward(batch.rgb, true);
  auto [pre_r, post_r] = head_rgb_->forward(f_rgb, true);
  Tensor logits_r = cls_rgb_->forward(post_r);

  Tensor dlog_r = Tensor::zeros(logits_r.shape());
  const double cls_r = classification_loss(logits_r, batch.person_ids, &dlog_r);
  Tensor dpre_r = Tensor::zeros(pre_r.shape());
  const TripletResult tri_r = triplet_loss(pre_r, batch.person_ids, triplet_margin, &dpre_r);

  if (cfg_.mode == AblationMode::kRgbOnly) {
    Tensor dpost_r = cls_rgb_->backward(dlog_r);
    Tensor d_frgb = head_rgb_->backward(dpre_r, dpost_r);
    backbone_rgb_->backward(d_frgb);
    return combine_losses(cls_r, 0.0, tri_r.value, 0.0, 0.0);
  }

  Tensor f_par = backbone_par_->forward(batch.par, true);
  Tensor omega = attention_->forward(f_rgb, f_par);
  Tensor f_fuse = fusion_->forward(f_rgb, f_par, omega);

  auto [pre_p, post_p] = head_par_->forward(f_par, true);
  Tensor logits_p = cls_par_->forward(post_p);
  Tensor dlog_p = Tensor::zeros(logits_p.shape());
  const double cls_p = classification_loss(logits_p, batch.person_ids, &dlog_p);
  Tensor dpre_p = Tensor::zeros(pre_p.shape());
  const TripletResult tri_p = triplet_loss(pre_p, batch.person_ids, triplet_margin, &dpre_p);

  auto [pre_f, post_f] = head_fuse_->forward(f_fuse, true);

  double match_v = 0.0, cls_f = 0.0;
  TripletResult tri_f;
  Tensor dpair, dlog_f, dpre_f;
  if (cfg_.mode == AblationMode::kFull) {
    Tensor quality = matcher_->quality_batch(batch.masks);
    Tensor pair_logits = matcher_->forward(f_fuse, quality, true);
    dpair = Tensor::zeros(pair_logits.shape());
    match_v = matching_loss_from_logits(pair_logits, labels, match_cfg, &dpair);
  } else {
    Tensor logits_f = cls_fuse_->forward(post_f);
    dlog_f = Tensor::zeros(logits_f.shape());
    cls_f = classification_loss(logits_f, batch.person_ids, &dlog_f);
    dpre_f = Tensor::zeros(pre_f.shape());
    tri_f = triplet_loss(pre_f, batch.person_ids, triplet_margin, &dpre_f);
  }

  Tensor dpost_r = cls_rgb_->backward(dlog_r);
  Tensor d_frgb = head_rgb_->backward(dpre_r, dpost_r);
  Tensor dpost_p = cls_par_->backward(dlog_p);
  Tensor d_fpar = head_par_->backward(dpre_p, dpost_p);

  Tensor d_ffuse;
  if (cfg_.mode == AblationMode::kFull) {
    d_ffuse = matcher_->backward(dpair);
  } else {
    Tensor dpost_f = cls_fuse_->backward(dlog_f);
    d_ffuse = head_fuse_->backward(dpre_f, dpost_f);
  }

  Tensor domega = Tensor::zeros(omega.shape());
  fusion_->backward(d_ffuse, d_frgb, d_fpar, domega);
  attention_->backward(domega, d_frgb, d_fpar);
  backbone_rgb_->backward(d_frgb);
  backbone_par_->backward(d_fpar);

  return combine_losses(cls_r, cls_p, tri_r.value, tri_p.value, match_v, cls_f, tri_f.value);
}

QAReidModel::RetrievalFeatures QAReidModel::extract(const Batch& batch) {
  RetrievalFeatures out;
  Tensor f_rgb = backbone_rgb_->forward(batch.rgb, false);
  if (cfg_.mode == AblationMode::kRgbOnly) {
    out.fmap = std::move(f_rgb);
    out.embed = head_rgb_->forward(out.fmap, false).second;
    return out;
  }
  Tensor f_par = backbone_par_->forward(batch.par, false);
  Tensor omega = attention_->forward(f_rgb, f_par);
  out.fmap = fusion_->forward(f_rgb, f_par, omega);
  out.embed = head_fuse_->forward(out.fmap, false).second;
  if (matcher_) out.quality = matcher_->quality_batch(batch.masks);
  return out;
}

Tensor QAReidModel::score(const RetrievalFeatures& query, const RetrievalFeatures& gallery) {
  if (effective_scorer(cfg_) == Scorer::kMatchProb)
    return matcher_->score_pairs(query.fmap, query.quality, gallery.fmap, gallery.quality);

  const int64_t nq = query.embed.dim(0), ng = gallery.embed.dim(0), c = query.embed.dim(1);
  auto unit_rows = [c](const Tensor& e) {
    Tensor u = e;
    for (int64_t i = 0; i < u.dim(0); ++i) {
      double* row = u.data() + i * c;
      double s = 0.0;
      for (int64_t k = 0; k < c; ++k) s += row[k] * row[k];
      const double inv = s > 0.0 ? 1.0 / std::sqrt(s) : 0.0;
      for (int64_t k = 0; k < c; ++k) row[k] *= inv;
    }
    return u;
  };
  const Tensor uq = unit_rows(query.embed), ug = unit_rows(gallery.embed);
  Tensor scores({nq, ng});
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < nq; ++i) {
    const double* qi = uq.data() + i * c;
    for (int64_t j = 0; j < ng; ++j) {
      const double* gj = ug.data() + j * c;
      double s = 0.0;
      for (int64_t k = 0; k < c; ++k) s += qi[k] * gj[k];
      scores.at(i, j) = s;
    }
  }
  return scores;
}

Tensor QAReidModel::saliency(const Batch& batch) {
  RetrievalFeatures feats = extract(batch);
  const int64_t n = feats.fmap.dim(0), c = feats.fmap.dim(1);
  const int64_t h = feats.fmap.dim(2), w = feats.fmap.dim(3);
  Tensor sal({n, h, w});
  for (int64_t i = 0; i < n; ++i) {
    double lo = 1e300, hi = -1e300;
    for (int64_t p = 0; p < h * w; ++p) {
      double s = 0.0;
      for (int64_t k = 0; k < c; ++k) {
        const double v = feats.fmap[((i * c + k) * h * w) + p];
        s += v * v;
      }
      s = std::sqrt(s);
      sal[i * h * w + p] = s;
      lo = std::min(lo, s);
      hi = std::max(hi, s);
    }
    const double span = hi - lo;
    for (int64_t p = 0; p < h * w; ++p)
      sal[i * h * w + p] = span > 0.0 ? (sal[i * h * w + p] - lo) / span : 0.0;
  }
  return sal;
}

std::vector<Param*> QAReidModel::params() {
  std::vector<Param*> out = backbone_rgb_->params();
  auto add = [&out](std::vector<Param*> v) { out.insert(out.end(), v.begin(), v.end()); };
  add(head_rgb_->params());
  add(cls_rgb_->params());
  if (backbone_par_) {
    add(backbone_par_->params());
    add(attention_->params());
    add(fusion_->params());
    add(head_par_->params());
    add(cls_par_->params());
    add(head_fuse_->params());
  }
  if (cls_fuse_) add(cls_fuse_->params());
  if (matcher_) add(matcher_->params());
  return out;
}

std::vector<NamedTensor> QAReidModel::state() {
  std::vector<NamedTensor> out = backbone_rgb_->state();
  auto add = [&out](std::vector<NamedTensor> v) { out.insert(out.end(), v.begin(), v.end()); };
  add(head_rgb_->state());
  if (backbone_par_) {
    add(backbone_par_->state());
    add(head_par_->state());
    add(head_fuse_->state());
  }
  if (matcher_) add(matcher_->state());
  return out;
}

void QAReidModel::zero_grad() {
  for (Param* p : params()) p->zero_grad();
}

}  // namespace qareid

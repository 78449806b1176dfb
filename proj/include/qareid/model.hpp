#pragma once

#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "qareid/backbone.hpp"
#include "qareid/dataset.hpp"
#include "qareid/fusion.hpp"
#include "qareid/losses.hpp"
#include "qareid/matcher.hpp"

namespace qareid {

// Which pipeline stages exist. kRgbOnly drops the parsing branch, fusion and
// matcher entirely; kNoMatch keeps both branches and the fusion but trains the
// fused embedding instead of the pairwise matcher; kFull is everything.
enum class AblationMode { kRgbOnly, kNoMatch, kFull };

AblationMode ablation_from_name(const std::string& name);
const char* ablation_name(AblationMode m);

// Retrieval scorer. kAuto picks the matcher probability when the model has a
// matcher and the embedding cosine otherwise.
enum class Scorer { kAuto, kMatchProb, kEmbedding };

Scorer scorer_from_name(const std::string& name);
const char* scorer_name(Scorer s);

struct ModelConfig {
  BackboneConfig backbone;
  int num_classes = 0;  // train identities; filled from the dataset
  LabelSet identity_labels = LabelSet::from_ints({kHead, kArms, kLegs});
  AblationMode mode = AblationMode::kFull;
  bool quality_weights = true;
  Scorer scorer = Scorer::kAuto;
};

void validate_model_config(const ModelConfig& cfg);
Scorer effective_scorer(const ModelConfig& cfg);

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

// A network-ready batch: raw images, body-masked images, the masks themselves
// (still at input resolution) and identity labels.
struct Batch {
  Tensor rgb;  // (B,3,H',W')
  Tensor par;  // (B,3,H',W')
  std::vector<BodyMask> masks;
  std::vector<int> person_ids;

  int size() const { return static_cast<int>(person_ids.size()); }
};

Batch make_batch(const std::vector<const SampleRecord*>& samples, const LabelSet& labels);

class QAReidModel {
 public:
  QAReidModel(const ModelConfig& cfg, uint64_t init_seed);

  const ModelConfig& config() const { return cfg_; }
  int feat_h() const { return backbone_rgb_->feat_h(); }
  int feat_w() const { return backbone_rgb_->feat_w(); }
  int channels() const { return backbone_rgb_->out_channels(); }

  // One training step's forward and backward pass. Gradients accumulate into
  // the parameters; the caller owns zeroing them between steps.
  LossBreakdown forward_backward(const Batch& batch, double triplet_margin,
                                 const MatchLossConfig& match_cfg);

  // Eval-mode features for retrieval.
  struct RetrievalFeatures {
    Tensor fmap;     // (N,C,h,w) fused map, or the rgb map without fusion
    Tensor quality;  // (N,h*w); empty when the model has no matcher
    Tensor embed;    // (N,C) post-norm embedding
  };
  RetrievalFeatures extract(const Batch& batch);

  // Pairwise retrieval scores (Nq,Ng) under the configured scorer.
  Tensor score(const RetrievalFeatures& query, const RetrievalFeatures& gallery);

  // Channel-L2 saliency of each sample's retrieval map, min-max scaled to
  // [0,1] per sample (constant maps collapse to zero). (N,h,w).
  Tensor saliency(const Batch& batch);

  std::vector<Param*> params();
  std::vector<NamedTensor> state();  // running statistics
  void zero_grad();

  PairMatcher* matcher() { return matcher_.get(); }
  MultiModalAttention* attention() { return attention_.get(); }

 private:
  ModelConfig cfg_;
  std::unique_ptr<Backbone> backbone_rgb_, backbone_par_;
  std::unique_ptr<MultiModalAttention> attention_;
  std::unique_ptr<FusionModule> fusion_;
  std::unique_ptr<EmbedHead> head_rgb_, head_par_, head_fuse_;
  std::unique_ptr<Classifier> cls_rgb_, cls_par_, cls_fuse_;
  std::unique_ptr<PairMatcher> matcher_;
};

}  // namespace qareid

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qareid/checkpoint.hpp"
#include "qareid/dataset.hpp"
#include "qareid/model.hpp"
#include "qareid/optim.hpp"

namespace qareid {

struct TrainConfig {
  int epochs = 100;
  int batch_size = 32;
  int p = 8;  // identities per batch
  int k = 4;  // instances per identity
  double lr = 3.5e-4;
  int lr_step = 40;
  double lr_gamma = 0.1;
  double triplet_margin = 0.3;
  bool match_diagonal = true;  // self pairs in the matching loss
  bool augment = true;
  AugmentationConfig aug;
  uint64_t seed = 0;
};

void validate_train_config(const TrainConfig& cfg);

// Train-split indices grouped by remapped person id.
std::vector<std::vector<int>> group_by_identity(const std::vector<SampleRecord>& samples);

// P identities, K instances each. Identities are drawn without replacement,
// instances with replacement once an identity has fewer than K images.
std::vector<int> pk_sample_batch(const std::vector<std::vector<int>>& by_identity, int p, int k,
                                 Rng& rng);

// Copies matching named tensors into the model's parameters and running
// statistics. Missing names or shape mismatches are validation errors.
void load_model_tensors(QAReidModel& model, const Checkpoint& ckpt);
void store_model_tensors(QAReidModel& model, Checkpoint& ckpt);

// Builds a model from a checkpoint's embedded config and loads its weights.
QAReidModel model_from_checkpoint(const Checkpoint& ckpt);

// PK-sampled training with per-iteration derived random streams, a JSONL loss
// log (one record per iteration, no timestamps, so equal seeds give
// byte-identical logs) and a rolling checkpoint per epoch.
class Trainer {
 public:
  Trainer(QAReidModel& model, const std::vector<SampleRecord>& train_set, const TrainConfig& cfg,
          std::string out_dir);

  // Continues a previous run: weights, optimizer moments and epoch counter.
  void restore(const Checkpoint& ckpt);

  void run();

  int completed_epochs() const { return completed_; }
  int iters_per_epoch() const { return iters_; }
  Checkpoint snapshot();
  std::string checkpoint_path() const { return out_dir_ + "/checkpoint.bin"; }
  std::string log_path() const { return out_dir_ + "/loss_log.jsonl"; }

 private:
  QAReidModel& model_;
  const std::vector<SampleRecord>& train_set_;
  TrainConfig cfg_;
  std::string out_dir_;
  std::vector<std::vector<int>> by_identity_;
  Adam adam_;
  int iters_ = 0;
  int completed_ = 0;
};

}  // namespace qareid

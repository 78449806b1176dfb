#include "qareid/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "qareid/errors.hpp"

namespace qareid {

void validate_train_config(const TrainConfig& cfg) {
  if (cfg.epochs < 1) throw ConfigError("epochs must be at least 1");
  if (cfg.p < 1 || cfg.k < 1) throw ConfigError("P and K must be at least 1");
  if (cfg.p * cfg.k != cfg.batch_size)
    throw ConfigError("P*K must equal the batch size: " + std::to_string(cfg.p) + "*" +
                      std::to_string(cfg.k) + " != " + std::to_string(cfg.batch_size));
  if (!(cfg.lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (cfg.lr_step < 1) throw ConfigError("lr_step must be at least 1");
  if (!(cfg.lr_gamma > 0.0)) throw ConfigError("lr_gamma must be positive");
  if (cfg.triplet_margin < 0.0) throw ConfigError("triplet margin must be nonnegative");
  validate_augmentation_config(cfg.aug);
}

std::vector<std::vector<int>> group_by_identity(const std::vector<SampleRecord>& samples) {
  int max_id = -1;
  for (const SampleRecord& s : samples) max_id = std::max(max_id, s.person_id);
  std::vector<std::vector<int>> by_id(max_id + 1);
  for (size_t i = 0; i < samples.size(); ++i)
    by_id[samples[i].person_id].push_back(static_cast<int>(i));
  by_id.erase(std::remove_if(by_id.begin(), by_id.end(),
                             [](const std::vector<int>& v) { return v.empty(); }),
              by_id.end());
  return by_id;
}

std::vector<int> pk_sample_batch(const std::vector<std::vector<int>>& by_identity, int p, int k,
                                 Rng& rng) {
  const int n_ids = static_cast<int>(by_identity.size());
  if (n_ids < p)
    throw ValidationError("need at least " + std::to_string(p) + " identities to sample, have " +
                          std::to_string(n_ids));
  std::vector<int> order(n_ids);
  for (int i = 0; i < n_ids; ++i) order[i] = i;
  rng.shuffle(order);

  std::vector<int> batch;
  batch.reserve(static_cast<size_t>(p) * k);
  for (int pi = 0; pi < p; ++pi) {
    const std::vector<int>& pool = by_identity[order[pi]];
    const int m = static_cast<int>(pool.size());
    if (m >= k) {
      std::vector<int> inst(pool);
      rng.shuffle(inst);
      for (int ki = 0; ki < k; ++ki) batch.push_back(inst[ki]);
    } else {
      for (int ki = 0; ki < k; ++ki) batch.push_back(pool[rng.uniform_int(0, m - 1)]);
    }
  }
  return batch;
}

namespace {

void copy_into(const Checkpoint& ckpt, const std::string& name, Tensor* dst) {
  auto it = ckpt.tensors.find(name);
  if (it == ckpt.tensors.end()) throw ValidationError("checkpoint is missing tensor " + name);
  if (!it->second.same_shape(*dst))
    throw ValidationError("checkpoint tensor " + name + " has shape " + it->second.shape_str() +
                          ", expected " + dst->shape_str());
  *dst = it->second;
}

}  // namespace

void load_model_tensors(QAReidModel& model, const Checkpoint& ckpt) {
  for (Param* p : model.params()) copy_into(ckpt, p->name, &p->value);
  for (auto& [name, t] : model.state()) copy_into(ckpt, name, t);
}

void store_model_tensors(QAReidModel& model, Checkpoint& ckpt) {
  for (Param* p : model.params()) ckpt.tensors[p->name] = p->value;
  for (auto& [name, t] : model.state()) ckpt.tensors[name] = *t;
}

QAReidModel model_from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.meta.contains("model"))
    throw ValidationError("checkpoint meta has no model config");
  ModelConfig cfg = model_config_from_json(ckpt.meta.at("model"));
  QAReidModel model(cfg, 0);
  load_model_tensors(model, ckpt);
  return model;
}

Trainer::Trainer(QAReidModel& model, const std::vector<SampleRecord>& train_set,
                 const TrainConfig& cfg, std::string out_dir)
    : model_(model),
      train_set_(train_set),
      cfg_(cfg),
      out_dir_(std::move(out_dir)),
      adam_(model.params(), AdamConfig{cfg.lr}) {
  validate_train_config(cfg_);
  if (train_set_.empty()) throw ValidationError("training split is empty");
  by_identity_ = group_by_identity(train_set_);
  if (static_cast<int>(by_identity_.size()) < cfg_.p)
    throw ValidationError("training split has " + std::to_string(by_identity_.size()) +
                          " identities, P=" + std::to_string(cfg_.p));
  iters_ = std::max<int>(1, static_cast<int>(train_set_.size()) / cfg_.batch_size);
}

void Trainer::restore(const Checkpoint& ckpt) {
  load_model_tensors(model_, ckpt);
  for (auto& [name, t] : adam_.state()) copy_into(ckpt, name, t);
  completed_ = ckpt.meta.value("epoch", 0);
  adam_.set_t(ckpt.meta.value("adam_t", int64_t{0}));
  if (completed_ < 0 || completed_ > cfg_.epochs)
    throw ValidationError("checkpoint epoch " + std::to_string(completed_) +
                          " is outside the configured schedule");
}

Checkpoint Trainer::snapshot() {
  Checkpoint ckpt;
  ckpt.meta = {{"version", 1},
               {"model", model_config_to_json(model_.config())},
               {"epoch", completed_},
               {"adam_t", adam_.t()}};
  store_model_tensors(model_, ckpt);
  for (auto& [name, t] : adam_.state()) ckpt.tensors[name] = *t;
  return ckpt;
}

void Trainer::run() {
  std::filesystem::create_directories(out_dir_);
  std::ofstream log(log_path(), completed_ > 0 ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("cannot open loss log: " + log_path());

  const Rng root(Rng::mix(cfg_.seed, 0x747261696eull));
  const MatchLossConfig match_cfg{cfg_.match_diagonal};

  for (int epoch = completed_; epoch < cfg_.epochs; ++epoch) {
    const double lr = lr_at_epoch(cfg_.lr, epoch, cfg_.lr_step, cfg_.lr_gamma);
    const Rng epoch_rng = root.fork(static_cast<uint64_t>(epoch));
    for (int it = 0; it < iters_; ++it) {
      const Rng iter_rng = epoch_rng.fork(static_cast<uint64_t>(it));
      Rng sample_rng = iter_rng.fork(0);
      const std::vector<int> idx = pk_sample_batch(by_identity_, cfg_.p, cfg_.k, sample_rng);

      std::vector<SampleRecord> slots(idx.size());
      for (size_t s = 0; s < idx.size(); ++s) {
        if (cfg_.augment) {
          Rng aug_rng = iter_rng.fork(1 + s);
          slots[s] = augment(train_set_[idx[s]], cfg_.aug, aug_rng);
        } else {
          slots[s] = train_set_[idx[s]];
        }
      }
      std::vector<const SampleRecord*> ptrs(slots.size());
      for (size_t s = 0; s < slots.size(); ++s) ptrs[s] = &slots[s];
      const Batch batch = make_batch(ptrs, model_.config().identity_labels);

      model_.zero_grad();
      const LossBreakdown lb = model_.forward_backward(batch, cfg_.triplet_margin, match_cfg);
      if (!std::isfinite(lb.total))
        throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch) + " iter " +
                               std::to_string(it));
      adam_.step(lr);

      const nlohmann::json line = {
          {"epoch", epoch},       {"iter", it},
          {"lr", lr},             {"cls_rgb", lb.cls_rgb},
          {"cls_par", lb.cls_par}, {"tri_rgb", lb.tri_rgb},
          {"tri_par", lb.tri_par}, {"match", lb.match},
          {"cls_fuse", lb.cls_fuse}, {"tri_fuse", lb.tri_fuse},
          {"total", lb.total}};
      log << line.dump() << "\n";
      log.flush();
    }
    completed_ = epoch + 1;
    save_checkpoint(checkpoint_path(), snapshot());
  }
}

}  // namespace qareid

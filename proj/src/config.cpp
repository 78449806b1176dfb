#include "qareid/config.hpp"

#include <algorithm>
#include <fstream>
#include <initializer_list>

#include "qareid/errors.hpp"

namespace qareid {

namespace {

void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                const char* ctx) {
  if (!j.is_object()) throw ConfigError(std::string(ctx) + " must be a JSON object");
  for (const auto& item : j.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(),
                                   [&item](const char* k) { return item.key() == k; });
    if (!known) throw ConfigError("unknown key '" + item.key() + "' in " + ctx);
  }
}

void parse_synth(const nlohmann::json& j, RunConfig& cfg) {
  check_keys(j,
             {"identities", "outfits_per_identity", "images_per_outfit", "height", "width",
              "cameras", "noise", "seed"},
             "dataset.synthetic");
  SyntheticGenConfig& s = cfg.synth;
  s.n_identities = j.value("identities", s.n_identities);
  s.outfits_per_identity = j.value("outfits_per_identity", s.outfits_per_identity);
  s.images_per_outfit = j.value("images_per_outfit", s.images_per_outfit);
  s.height = j.value("height", s.height);
  s.width = j.value("width", s.width);
  s.cameras = j.value("cameras", s.cameras);
  s.noise = j.value("noise", s.noise);
  if (j.contains("seed")) {
    s.seed = j.at("seed").get<uint64_t>();
    cfg.synth_seed_explicit = true;
  }
}

void parse_aug(const nlohmann::json& j, AugmentationConfig& a) {
  check_keys(j,
             {"flip_prob", "crop_pad", "crop_h", "crop_w", "erase_prob", "erase_lo", "erase_hi",
              "erase_aspect_lo", "erase_aspect_hi"},
             "train.aug");
  a.flip_prob = j.value("flip_prob", a.flip_prob);
  a.crop_pad = j.value("crop_pad", a.crop_pad);
  a.crop_h = j.value("crop_h", a.crop_h);
  a.crop_w = j.value("crop_w", a.crop_w);
  a.erase_prob = j.value("erase_prob", a.erase_prob);
  a.erase_lo = j.value("erase_lo", a.erase_lo);
  a.erase_hi = j.value("erase_hi", a.erase_hi);
  a.erase_aspect_lo = j.value("erase_aspect_lo", a.erase_aspect_lo);
  a.erase_aspect_hi = j.value("erase_aspect_hi", a.erase_aspect_hi);
}

void parse_train(const nlohmann::json& j, TrainConfig& t) {
  check_keys(j,
             {"epochs", "batch_size", "p", "k", "lr", "lr_step", "lr_gamma", "margin",
              "match_diagonal", "augment", "aug"},
             "train");
  t.epochs = j.value("epochs", t.epochs);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.p = j.value("p", t.p);
  t.k = j.value("k", t.k);
  t.lr = j.value("lr", t.lr);
  t.lr_step = j.value("lr_step", t.lr_step);
  t.lr_gamma = j.value("lr_gamma", t.lr_gamma);
  t.triplet_margin = j.value("margin", t.triplet_margin);
  t.match_diagonal = j.value("match_diagonal", t.match_diagonal);
  t.augment = j.value("augment", t.augment);
  if (j.contains("aug")) parse_aug(j.at("aug"), t.aug);
}

}  // namespace

RunConfig run_config_from_json(const nlohmann::json& j) {
  check_keys(j, {"seed", "out_dir", "dataset", "model", "train", "protocol"}, "run config");
  RunConfig cfg;
  cfg.seed = j.value("seed", uint64_t{0});
  cfg.synth.seed = cfg.seed;
  cfg.train.seed = cfg.seed;
  cfg.out_dir = j.value("out_dir", cfg.out_dir);

  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    check_keys(d, {"manifest", "synthetic"}, "dataset");
    if (d.contains("manifest")) cfg.manifest = d.at("manifest").get<std::string>();
    if (d.contains("synthetic")) {
      cfg.synthetic = true;
      parse_synth(d.at("synthetic"), cfg);
    }
  } else {
    cfg.synthetic = true;
  }

  if (j.contains("model")) cfg.model = model_config_from_json(j.at("model"));
  if (j.contains("train")) parse_train(j.at("train"), cfg.train);
  if (j.contains("protocol")) cfg.protocol = protocol_from_name(j.at("protocol").get<std::string>());
  validate_run_config(cfg);
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

void validate_run_config(const RunConfig& cfg) {
  if (!cfg.manifest.empty() && cfg.synthetic)
    throw ConfigError("config names both a manifest and a synthetic dataset; pick one");
  if (cfg.manifest.empty() && !cfg.synthetic)
    throw ConfigError("config names no dataset source");
  if (cfg.synthetic) {
    validate_synthetic_config(cfg.synth);
    if (cfg.synth.height != cfg.model.backbone.input_h ||
        cfg.synth.width != cfg.model.backbone.input_w)
      throw ConfigError("synthetic resolution " + std::to_string(cfg.synth.height) + "x" +
                        std::to_string(cfg.synth.width) + " does not match the model input " +
                        std::to_string(cfg.model.backbone.input_h) + "x" +
                        std::to_string(cfg.model.backbone.input_w));
  }
  ModelConfig probe = cfg.model;
  if (probe.num_classes == 0) probe.num_classes = 1;  // filled from the dataset later
  validate_model_config(probe);
  validate_train_config(cfg.train);
  const AugmentationConfig& a = cfg.train.aug;
  const bool crop_resizes = a.crop_h != 0 || a.crop_w != 0;
  if (crop_resizes &&
      (a.crop_h != cfg.model.backbone.input_h || a.crop_w != cfg.model.backbone.input_w))
    throw ConfigError("crop output must match the model input resolution");
}

void override_seed(RunConfig& cfg, uint64_t seed) {
  cfg.seed = seed;
  cfg.train.seed = seed;
  if (!cfg.synth_seed_explicit) cfg.synth.seed = seed;
}

}  // namespace qareid

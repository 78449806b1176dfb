#pragma once

#include <string>

#include "json.hpp"
#include "qareid/dataset.hpp"
#include "qareid/eval.hpp"
#include "qareid/model.hpp"
#include "qareid/train.hpp"

namespace qareid {

// One experiment: dataset source, model, training schedule, protocol,
// output directory and seed. Loaded from a JSON file; unknown keys are
// configuration errors so typos surface instead of silently defaulting.
struct RunConfig {
  uint64_t seed = 0;
  std::string out_dir = "runs/default";

  std::string manifest;     // dataset from disk when non-empty
  bool synthetic = false;   // otherwise generate in memory / on disk
  SyntheticGenConfig synth;
  bool synth_seed_explicit = false;

  ModelConfig model;
  TrainConfig train;
  Protocol protocol = Protocol::kCc;
};

RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);
void validate_run_config(const RunConfig& cfg);

// Applies a new top-level seed, propagating to the train stream and, unless
// the config pinned one, the synthetic generator.
void override_seed(RunConfig& cfg, uint64_t seed);

}  // namespace qareid

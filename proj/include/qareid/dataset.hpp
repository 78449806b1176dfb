#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "qareid/image.hpp"
#include "qareid/parsing.hpp"
#include "qareid/rng.hpp"

namespace qareid {

enum class Split { kTrain, kQuery, kGallery };

const char* split_name(Split s);
Split split_from_name(const std::string& name);

// One image plus its segmentation and identity/outfit/camera metadata.
struct SampleRecord {
  Image image;
  SegMap seg;
  int person_id = -1;       // contiguous 0-based index after remapping
  int orig_person_id = -1;  // id as recorded on disk
  int clothes_id = 0;       // outfit index within the person
  int camera_id = 0;
  Split split = Split::kTrain;
};

// Path-level descriptor of one sample; paths are relative to the manifest root.
struct ManifestEntry {
  std::string path;
  std::string seg_path;
  int person_id = 0;
  int clothes_id = 0;
  int camera_id = 0;
  Split split = Split::kTrain;
};

struct DatasetManifest {
  std::string root;
  std::vector<ManifestEntry> entries;
  int num_classes = kNumSynthClasses;  // labels run 0..num_classes-1, 0 = background
  LabelSet identity_labels;
};

void validate_manifest(const DatasetManifest& m);

// The manifest file lives at <root>/manifest.txt; entry paths inside it are
// relative to the directory containing the file.
void write_manifest(const DatasetManifest& m, const std::string& manifest_path);
DatasetManifest read_manifest(const std::string& manifest_path);

// Loads every entry, scales images to [0,1], leaves seg labels untouched and
// remaps person ids onto 0..P-1 in sorted order of the on-disk ids.
std::vector<SampleRecord> load_dataset(const DatasetManifest& m);

struct SyntheticGenConfig {
  int n_identities = 8;
  int outfits_per_identity = 2;
  int images_per_outfit = 4;
  int height = 64;
  int width = 32;
  int cameras = 3;
  double noise = 1.0;
  uint64_t seed = 0;
};

void validate_synthetic_config(const SyntheticGenConfig& cfg);

// Ground-truth generation parameters, kept for tests and debugging.
struct SyntheticTruth {
  struct Geometry {
    double head_r, torso_w, torso_h, arm_w, arm_len, leg_w, leg_len, leg_gap;
  };
  std::vector<Geometry> identities;
  // head/arm tone per person, fixed across outfits like the silhouette
  std::vector<std::array<double, 3>> skin_tones;
  // indexed by person * outfits_per_identity + outfit
  std::vector<std::array<double, 6>> outfit_colors;  // torso rgb, leg rgb
};

// Renders the full benchmark in memory. Pixels are quantized to 8 bits so the
// records match a PNG round trip exactly. Records carry remapped person ids.
std::vector<SampleRecord> generate_synthetic_samples(const SyntheticGenConfig& cfg,
                                                     SyntheticTruth* truth = nullptr);

// Same rendering, written to disk under out_root plus a manifest.txt.
DatasetManifest generate_synthetic(const SyntheticGenConfig& cfg, const std::string& out_root);

struct AugmentationConfig {
  double flip_prob = 0.5;
  int crop_pad = 4;                 // zero-pad border before cropping back
  int crop_h = 0, crop_w = 0;       // crop output size; 0 keeps the input size
  double erase_prob = 0.5;
  double erase_lo = 0.02, erase_hi = 0.4;  // admissible erased-area ratio
  double erase_aspect_lo = 0.3, erase_aspect_hi = 3.33;
};

void validate_augmentation_config(const AugmentationConfig& cfg);

// Flip, then pad-and-crop, then erase. All geometric transforms hit image and
// seg identically; erasing blacks out the image patch and relabels it background.
SampleRecord augment(const SampleRecord& sample, const AugmentationConfig& cfg, Rng& rng);

}  // namespace qareid

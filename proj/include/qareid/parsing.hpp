#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qareid/image.hpp"

namespace qareid {

// Labels of the parsing taxonomy considered identity-related.
struct LabelSet {
  std::vector<int> labels;  // sorted, unique, all >= 1

  bool contains(int label) const;
  static LabelSet from_ints(std::vector<int> v);
  // Accepts symbolic names of the synthetic taxonomy (head/torso/arms/legs).
  static LabelSet from_names(const std::vector<std::string>& names);
};

// Synthetic taxonomy label values; 0 is background.
enum SynthLabel : uint8_t {
  kBackground = 0,
  kHead = 1,
  kTorso = 2,
  kArms = 3,
  kLegs = 4,
};
inline constexpr int kNumSynthClasses = 5;

// Binary body-region mask, same spatial size as its source segmentation.
struct BodyMask {
  int h = 0, w = 0;
  std::vector<uint8_t> m;  // values in {0,1}

  BodyMask() = default;
  BodyMask(int hh, int ww) : h(hh), w(ww), m(static_cast<size_t>(hh) * ww, 0) {}
  uint8_t at(int r, int c) const { return m[static_cast<size_t>(r) * w + c]; }
  int64_t popcount() const;
};

// mask(r,c) = 1 iff seg(r,c) is in the label set. Empty label sets are a
// configuration error.
BodyMask build_body_mask(const SegMap& seg, const LabelSet& labels);

// Pixelwise product, mask broadcast over the three channels. Masked-out
// pixels are exactly zero.
Image apply_mask(const Image& img, const BodyMask& mask);

}  // namespace qareid

#include "qareid/parsing.hpp"

#include <algorithm>

#include "qareid/errors.hpp"

namespace qareid {

bool LabelSet::contains(int label) const {
  return std::binary_search(labels.begin(), labels.end(), label);
}

LabelSet LabelSet::from_ints(std::vector<int> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  for (int x : v) {
    if (x < 1) throw ConfigError("label values must be >= 1, got " + std::to_string(x));
  }
  return LabelSet{std::move(v)};
}

LabelSet LabelSet::from_names(const std::vector<std::string>& names) {
  std::vector<int> v;
  for (const auto& n : names) {
    if (n == "head") v.push_back(kHead);
    else if (n == "torso") v.push_back(kTorso);
    else if (n == "arms") v.push_back(kArms);
    else if (n == "legs") v.push_back(kLegs);
    else throw ConfigError("unknown body-region label name: " + n);
  }
  return from_ints(std::move(v));
}

int64_t BodyMask::popcount() const {
  int64_t n = 0;
  for (uint8_t v : m) n += v;
  return n;
}

BodyMask build_body_mask(const SegMap& seg, const LabelSet& labels) {
  if (labels.labels.empty()) throw ConfigError("identity label set must not be empty");
  BodyMask mask(seg.h, seg.w);
  const size_t n = seg.labels.size();
  for (size_t i = 0; i < n; ++i) {
    mask.m[i] = labels.contains(seg.labels[i]) ? 1 : 0;
  }
  return mask;
}

Image apply_mask(const Image& img, const BodyMask& mask) {
  if (img.h != mask.h || img.w != mask.w) {
    throw ValidationError("mask size " + std::to_string(mask.h) + "x" + std::to_string(mask.w) +
                          " does not match image size " + std::to_string(img.h) + "x" +
                          std::to_string(img.w));
  }
  Image out = img;
  const size_t n = static_cast<size_t>(img.h) * img.w;
  for (size_t i = 0; i < n; ++i) {
    if (!mask.m[i]) {
      out.px[3 * i + 0] = 0.0;
      out.px[3 * i + 1] = 0.0;
      out.px[3 * i + 2] = 0.0;
    }
  }
  return out;
}

}  // namespace qareid

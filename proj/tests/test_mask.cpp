#include <cmath>

#include "doctest.h"
#include "qareid/errors.hpp"
#include "qareid/parsing.hpp"
#include "qareid/rng.hpp"

using namespace qareid;

namespace {

SegMap checkerboard_seg(int h, int w) {
  SegMap seg(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) seg.at(r, c) = static_cast<uint8_t>((r * w + c) % kNumSynthClasses);
  return seg;
}

double energy(const Image& img) {
  double s = 0.0;
  for (double v : img.px) s += v * v;
  return s;
}

}  // namespace

TEST_CASE("label sets from ints sort and deduplicate") {
  const LabelSet s = LabelSet::from_ints({4, 1, 3, 1});
  CHECK(s.labels == std::vector<int>{1, 3, 4});
  CHECK(s.contains(1));
  CHECK(s.contains(3));
  CHECK(s.contains(4));
  CHECK_FALSE(s.contains(2));
  CHECK_FALSE(s.contains(0));
}

TEST_CASE("label sets reject background values") {
  CHECK_THROWS_AS(LabelSet::from_ints({0, 1}), ConfigError);
  CHECK_THROWS_AS(LabelSet::from_ints({-3}), ConfigError);
  // an empty set can be built but cannot select anything
  const LabelSet empty = LabelSet::from_ints({});
  CHECK(empty.labels.empty());
  CHECK_THROWS_AS(build_body_mask(SegMap(2, 2), empty), ConfigError);
}

TEST_CASE("label sets from names map the synthetic taxonomy") {
  const LabelSet s = LabelSet::from_names({"head", "arms", "legs"});
  CHECK(s.labels == std::vector<int>{kHead, kArms, kLegs});
  CHECK(LabelSet::from_names({"torso"}).labels == std::vector<int>{kTorso});
  CHECK_THROWS_AS(LabelSet::from_names({"hat"}), ConfigError);
}

TEST_CASE("body mask selects exactly the requested labels") {
  const SegMap seg = checkerboard_seg(10, 10);
  const LabelSet s = LabelSet::from_ints({kHead, kArms});
  const BodyMask mask = build_body_mask(seg, s);
  REQUIRE(mask.h == 10);
  REQUIRE(mask.w == 10);
  int64_t want = 0;
  for (int r = 0; r < 10; ++r)
    for (int c = 0; c < 10; ++c) {
      const bool in = seg.at(r, c) == kHead || seg.at(r, c) == kArms;
      CHECK(mask.at(r, c) == (in ? 1 : 0));
      want += in;
    }
  CHECK(mask.popcount() == want);
}

TEST_CASE("body mask extremes") {
  SegMap seg(6, 4);  // all background
  const LabelSet all = LabelSet::from_ints({kHead, kTorso, kArms, kLegs});
  CHECK(build_body_mask(seg, all).popcount() == 0);
  for (auto& v : seg.labels) v = kTorso;
  CHECK(build_body_mask(seg, all).popcount() == 6 * 4);
  CHECK(build_body_mask(seg, LabelSet::from_ints({kLegs})).popcount() == 0);
}

TEST_CASE("masking is a pixelwise gate") {
  Rng rng(71);
  Image img(8, 5);
  for (auto& v : img.px) v = rng.uniform();
  const SegMap seg = checkerboard_seg(8, 5);
  const LabelSet s = LabelSet::from_ints({kHead, kLegs});
  const BodyMask mask = build_body_mask(seg, s);
  const Image out = apply_mask(img, mask);
  REQUIRE(out.h == 8);
  REQUIRE(out.w == 5);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 5; ++c)
      for (int ch = 0; ch < 3; ++ch) {
        if (mask.at(r, c))
          CHECK(out.at(r, c, ch) == img.at(r, c, ch));
        else
          CHECK(out.at(r, c, ch) == 0.0);
      }
  CHECK(energy(out) <= energy(img));

  // Idempotent: masking twice changes nothing further.
  const Image twice = apply_mask(out, mask);
  for (size_t i = 0; i < out.px.size(); ++i) CHECK(twice.px[i] == out.px[i]);
}

TEST_CASE("all-ones mask is the identity, all-zeros annihilates") {
  Rng rng(73);
  Image img(4, 4);
  for (auto& v : img.px) v = rng.uniform();
  BodyMask ones(4, 4), zeros(4, 4);
  for (auto& v : ones.m) v = 1;
  const Image same = apply_mask(img, ones);
  for (size_t i = 0; i < img.px.size(); ++i) CHECK(same.px[i] == img.px[i]);
  CHECK(energy(apply_mask(img, zeros)) == 0.0);
}

TEST_CASE("larger label sets keep at least as much energy") {
  Rng rng(79);
  Image img(12, 6);
  for (auto& v : img.px) v = rng.uniform(0.1, 1.0);
  const SegMap seg = checkerboard_seg(12, 6);
  const LabelSet small = LabelSet::from_ints({kHead});
  const LabelSet big = LabelSet::from_ints({kHead, kTorso, kArms});
  const double e_small = energy(apply_mask(img, build_body_mask(seg, small)));
  const double e_big = energy(apply_mask(img, build_body_mask(seg, big)));
  CHECK(e_small <= e_big + 1e-12);
}

TEST_CASE("mask and image sizes must agree") {
  const Image img(6, 4);
  const BodyMask mask(4, 6);
  CHECK_THROWS_AS(apply_mask(img, mask), ValidationError);
}

#include <cmath>

#include "doctest.h"
#include "qareid/errors.hpp"
#include "qareid/losses.hpp"
#include "qareid/rng.hpp"

using namespace qareid;

TEST_CASE("pair matrix from identity labels") {
  BatchLabels labels;
  labels.person_ids = {0, 0, 1};
  const Tensor y = labels.pair_matrix();
  REQUIRE(y.dim(0) == 3);
  REQUIRE(y.dim(1) == 3);
  const double want[9] = {1, 1, 0, 1, 1, 0, 0, 0, 1};
  for (int64_t i = 0; i < 9; ++i) CHECK(y[i] == want[i]);
}

TEST_CASE("classification loss on uniform logits is log of the class count") {
  for (int p : {2, 5, 17}) {
    Tensor logits = Tensor::zeros({3, p});
    const std::vector<int> ids{0, p - 1, p / 2};
    CHECK(classification_loss(logits, ids) == doctest::Approx(std::log(p)).epsilon(1e-12));
  }
}

TEST_CASE("classification loss two-sample example") {
  Tensor logits({2, 2});
  logits.at(0, 0) = 2.0;
  logits.at(0, 1) = 0.0;
  logits.at(1, 0) = 0.0;
  logits.at(1, 1) = 1.0;
  const double want = 0.5 * (std::log(1.0 + std::exp(-2.0)) + std::log(1.0 + std::exp(-1.0)));
  const double got = classification_loss(logits, {0, 1});
  CHECK(got == doctest::Approx(want).epsilon(1e-12));
  CHECK(got == doctest::Approx(0.2201).epsilon(1e-3));
}

TEST_CASE("confident correct logits drive the loss toward zero") {
  Tensor logits = Tensor::zeros({2, 3});
  logits.at(0, 1) = 30.0;
  logits.at(1, 2) = 30.0;
  CHECK(classification_loss(logits, {1, 2}) < 1e-12);
}

TEST_CASE("classification loss validates its inputs") {
  Tensor logits = Tensor::zeros({2, 4});
  CHECK_THROWS_AS(classification_loss(logits, {0}), ValidationError);
  CHECK_THROWS_AS(classification_loss(logits, {0, 4}), ValidationError);
  CHECK_THROWS_AS(classification_loss(logits, {-1, 0}), ValidationError);
}

TEST_CASE("classification gradient matches finite differences") {
  Rng rng(501);
  Tensor logits = Tensor::randn({3, 4}, rng);
  const std::vector<int> ids{2, 0, 3};
  Tensor dlogits;
  classification_loss(logits, ids, &dlogits);
  REQUIRE(dlogits.same_shape(logits));
  const double eps = 1e-6;
  for (int64_t i = 0; i < logits.numel(); ++i) {
    const double keep = logits[i];
    logits[i] = keep + eps;
    const double up = classification_loss(logits, ids);
    logits[i] = keep - eps;
    const double dn = classification_loss(logits, ids);
    logits[i] = keep;
    CHECK(dlogits[i] == doctest::Approx((up - dn) / (2 * eps)).epsilon(1e-5).scale(1e-3));
  }
}

TEST_CASE("triplet loss on identical embeddings equals the margin") {
  Tensor e = Tensor::full({4, 3}, 0.7);
  const auto res = triplet_loss(e, {0, 0, 1, 1}, 0.3);
  CHECK(res.valid);
  CHECK(res.value == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("well-separated clusters have zero triplet loss") {
  Tensor e({3, 1});
  e[0] = 0.0;
  e[1] = 0.1;
  e[2] = 1.0;
  const auto res = triplet_loss(e, {0, 0, 1}, 0.3);
  CHECK(res.valid);
  CHECK(res.value == doctest::Approx(0.0));
}

TEST_CASE("triplet loss is translation invariant") {
  Rng rng(503);
  Tensor e = Tensor::randn({6, 4}, rng);
  const std::vector<int> ids{0, 0, 1, 1, 2, 2};
  const double base = triplet_loss(e, ids, 0.5).value;
  for (int64_t n = 0; n < 6; ++n)
    for (int64_t d = 0; d < 4; ++d) e.at(n, d) += 11.0;
  CHECK(triplet_loss(e, ids, 0.5).value == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("single-identity batches have no triplets") {
  Tensor e = Tensor::full({3, 2}, 1.0);
  const auto res = triplet_loss(e, {4, 4, 4}, 0.3);
  CHECK_FALSE(res.valid);
  CHECK(res.value == 0.0);
}

TEST_CASE("triplet gradient matches finite differences") {
  Rng rng(509);
  Tensor e = Tensor::randn({6, 3}, rng);
  const std::vector<int> ids{0, 0, 1, 1, 2, 2};
  const double margin = 1.0;  // large margin keeps most anchors active
  Tensor de = Tensor::zeros(e.shape());
  triplet_loss(e, ids, margin, &de);
  const double eps = 1e-6;
  for (int64_t i = 0; i < e.numel(); ++i) {
    const double keep = e[i];
    e[i] = keep + eps;
    const double up = triplet_loss(e, ids, margin).value;
    e[i] = keep - eps;
    const double dn = triplet_loss(e, ids, margin).value;
    e[i] = keep;
    CHECK(de[i] == doctest::Approx((up - dn) / (2 * eps)).epsilon(1e-4).scale(1e-3));
  }
}

TEST_CASE("matching loss at even odds is log two") {
  Tensor p = Tensor::full({3, 3}, 0.5);
  BatchLabels labels;
  labels.person_ids = {0, 1, 1};
  CHECK(matching_loss(p, labels) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("perfect predictions cost almost nothing") {
  BatchLabels labels;
  labels.person_ids = {0, 0, 1};
  const Tensor y = labels.pair_matrix();
  Tensor p = y;
  const double v = matching_loss(p, labels);
  CHECK(v > 0.0);       // clamping keeps the log finite but nonzero
  CHECK(v < 1e-5);
}

TEST_CASE("two-sample matching example") {
  Tensor p({2, 2});
  p.at(0, 0) = 0.9;
  p.at(0, 1) = 0.2;
  p.at(1, 0) = 0.2;
  p.at(1, 1) = 0.7;
  BatchLabels labels;
  labels.person_ids = {0, 1};
  const double want =
      -0.25 * (std::log(0.9) + std::log(0.8) + std::log(0.8) + std::log(0.7));
  const double got = matching_loss(p, labels);
  CHECK(got == doctest::Approx(want).epsilon(1e-12));
  CHECK(got == doctest::Approx(0.2270806).epsilon(1e-4));

  // without the self pairs only the off-diagonal terms remain
  MatchLossConfig cfg;
  cfg.include_diagonal = false;
  CHECK(matching_loss(p, labels, cfg) == doctest::Approx(-std::log(0.8)).epsilon(1e-12));
}

TEST_CASE("matching loss is invariant to transposing the probabilities") {
  Rng rng(521);
  const int b = 5;
  Tensor p({b, b});
  for (auto& v : p) v = rng.uniform(0.05, 0.95);
  Tensor pt({b, b});
  for (int64_t i = 0; i < b; ++i)
    for (int64_t j = 0; j < b; ++j) pt.at(j, i) = p.at(i, j);
  BatchLabels labels;
  labels.person_ids = {0, 0, 1, 2, 2};
  CHECK(matching_loss(p, labels) == doctest::Approx(matching_loss(pt, labels)).epsilon(1e-12));
}

TEST_CASE("excluding the diagonal needs at least two samples") {
  Tensor p = Tensor::full({1, 1}, 0.5);
  BatchLabels labels;
  labels.person_ids = {0};
  MatchLossConfig cfg;
  cfg.include_diagonal = false;
  CHECK_THROWS_AS(matching_loss(p, labels, cfg), ValidationError);
  matching_loss(p, labels);  // diagonal included is fine at B=1
}

TEST_CASE("matching gradient matches finite differences") {
  Rng rng(523);
  const int b = 3;
  Tensor p({b, b});
  for (auto& v : p) v = rng.uniform(0.1, 0.9);
  BatchLabels labels;
  labels.person_ids = {0, 1, 0};
  for (const bool diag : {true, false}) {
    MatchLossConfig cfg;
    cfg.include_diagonal = diag;
    Tensor dp = Tensor::zeros(p.shape());
    matching_loss(p, labels, cfg, &dp);
    const double eps = 1e-7;
    for (int64_t i = 0; i < p.numel(); ++i) {
      const double keep = p[i];
      p[i] = keep + eps;
      const double up = matching_loss(p, labels, cfg);
      p[i] = keep - eps;
      const double dn = matching_loss(p, labels, cfg);
      p[i] = keep;
      CHECK(dp[i] == doctest::Approx((up - dn) / (2 * eps)).epsilon(1e-4).scale(1e-3));
    }
  }
}

TEST_CASE("logit-space matching loss agrees with probability space") {
  Rng rng(527);
  const int b = 3;
  Tensor logits({static_cast<int64_t>(b * b)});
  for (auto& v : logits) v = rng.normal(0.0, 2.0);
  Tensor p({b, b});
  for (int64_t i = 0; i < b * b; ++i) p[i] = 1.0 / (1.0 + std::exp(-logits[i]));
  BatchLabels labels;
  labels.person_ids = {1, 1, 0};
  CHECK(matching_loss_from_logits(logits, labels) ==
        doctest::Approx(matching_loss(p, labels)).epsilon(1e-12));
}

TEST_CASE("fused logit gradient matches finite differences") {
  Rng rng(529);
  const int b = 3;
  Tensor logits({static_cast<int64_t>(b * b)});
  for (auto& v : logits) v = rng.normal(0.0, 1.5);
  BatchLabels labels;
  labels.person_ids = {0, 1, 1};
  for (const bool diag : {true, false}) {
    MatchLossConfig cfg;
    cfg.include_diagonal = diag;
    Tensor dl = Tensor::zeros(logits.shape());
    matching_loss_from_logits(logits, labels, cfg, &dl);
    const double eps = 1e-6;
    for (int64_t i = 0; i < logits.numel(); ++i) {
      const double keep = logits[i];
      logits[i] = keep + eps;
      const double up = matching_loss_from_logits(logits, labels, cfg);
      logits[i] = keep - eps;
      const double dn = matching_loss_from_logits(logits, labels, cfg);
      logits[i] = keep;
      CHECK(dl[i] == doctest::Approx((up - dn) / (2 * eps)).epsilon(1e-5).scale(1e-3));
    }
  }
}

TEST_CASE("extreme logits stay finite through the loss") {
  Tensor logits({4});
  logits[0] = 800.0;
  logits[1] = -800.0;
  logits[2] = 0.0;
  logits[3] = 50.0;
  BatchLabels labels;
  labels.person_ids = {0, 1};
  Tensor dl = Tensor::zeros(logits.shape());
  const double v = matching_loss_from_logits(logits, labels, {}, &dl);
  CHECK(std::isfinite(v));
  CHECK(dl.all_finite());
}

TEST_CASE("loss combination is the plain sum") {
  const LossBreakdown zero = combine_losses(0, 0, 0, 0, 0);
  CHECK(zero.total == 0.0);
  const LossBreakdown ones = combine_losses(1, 1, 1, 1, 1);
  CHECK(ones.total == doctest::Approx(5.0));
  CHECK(ones.cls_fuse == 0.0);
  CHECK(ones.tri_fuse == 0.0);
  const LossBreakdown full = combine_losses(0.5, 0.25, 0.125, 1.0, 2.0, 0.75, 0.375);
  CHECK(full.total == doctest::Approx(0.5 + 0.25 + 0.125 + 1.0 + 2.0 + 0.75 + 0.375).epsilon(1e-12));
  Rng rng(541);
  double parts[7];
  double sum = 0.0;
  for (double& v : parts) {
    v = rng.uniform(-1.0, 3.0);
    sum += v;
  }
  const LossBreakdown r =
      combine_losses(parts[0], parts[1], parts[2], parts[3], parts[4], parts[5], parts[6]);
  CHECK(r.total == doctest::Approx(sum).epsilon(1e-9));
}

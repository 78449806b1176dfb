#include <cmath>
#include <vector>

#include "doctest.h"
#include "qareid/errors.hpp"
#include "qareid/kernels.hpp"
#include "qareid/losses.hpp"
#include "qareid/matcher.hpp"
#include "qareid/ref_kernels.hpp"
#include "qareid/rng.hpp"

using namespace qareid;

namespace {

BodyMask random_body_mask(int h, int w, Rng& rng, double p = 0.4) {
  BodyMask m(h, w);
  for (auto& v : m.m) v = rng.bernoulli(p) ? 1 : 0;
  return m;
}

Tensor slice_sample(const Tensor& f, int64_t n) {
  Tensor out({f.dim(1), f.dim(2), f.dim(3)});
  const int64_t sz = out.numel();
  for (int64_t i = 0; i < sz; ++i) out[i] = f[n * sz + i];
  return out;
}

}  // namespace

TEST_CASE("quality maps from masks") {
  BodyMask mask(4, 4);
  mask.m[0] = mask.m[1] = mask.m[4] = mask.m[5] = 1;  // top-left 2x2 block
  const QualityMap q = compute_quality_weights(mask, 2, 2);
  REQUIRE(q.q.size() == 4);
  const double e = std::exp(1.0);
  CHECK(q.q[0] == doctest::Approx(e / (e + 3)).epsilon(1e-9));
  CHECK(q.q[1] == doctest::Approx(1.0 / (e + 3)).epsilon(1e-9));
  CHECK(q.q[0] == doctest::Approx(0.4754).epsilon(2e-3));

  BodyMask empty(6, 6);
  for (double v : compute_quality_weights(empty, 3, 3).q)
    CHECK(v == doctest::Approx(1.0 / 9).epsilon(1e-12));

  const QualityMap u = uniform_quality(4, 2);
  CHECK(u.h == 4);
  CHECK(u.w == 2);
  for (double v : u.q) CHECK(v == doctest::Approx(1.0 / 8).epsilon(1e-15));
}

TEST_CASE("quality map grid mismatches are rejected") {
  // 8x4 mask on a 2x2 grid: row block 4, column block 2
  CHECK_THROWS_AS(compute_quality_weights(BodyMask(8, 4), 2, 2), ConfigError);
  // mask smaller than the grid
  CHECK_THROWS_AS(compute_quality_weights(BodyMask(2, 2), 4, 4), ConfigError);
  // valid: 9x9 on 2x2 uses k=4 and ignores the trailing row/column
  const QualityMap q = compute_quality_weights(BodyMask(9, 9), 2, 2);
  CHECK(q.q.size() == 4);
}

TEST_CASE("raising a block's occupancy raises its quality weight") {
  Rng rng(401);
  BodyMask mask = random_body_mask(12, 8, rng);
  const QualityMap before = compute_quality_weights(mask, 3, 2);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) mask.m[static_cast<size_t>(r) * 8 + c] = 1;
  const QualityMap after = compute_quality_weights(mask, 3, 2);
  CHECK(after.q[0] >= before.q[0] - 1e-12);
}

TEST_CASE("pixel similarity respects quality scaling and cosine bounds") {
  Rng rng(409);
  const Tensor f1 = Tensor::randn({3, 2, 2}, rng);
  const Tensor f2 = Tensor::randn({3, 2, 2}, rng);
  QualityMap q1 = uniform_quality(2, 2), q2 = uniform_quality(2, 2);
  const Tensor s = pixel_similarity(f1, q1, f2, q2);
  REQUIRE(s.dim(0) == 4);
  REQUIRE(s.dim(1) == 4);
  // uniform maps rescale to weight exactly 1 per side, so sim1 is the cosine
  for (int64_t i = 0; i < s.numel(); ++i) {
    CHECK(s[i] <= 1.0 + 1e-12);
    CHECK(s[i] >= -1.0 - 1e-12);
  }
  // doubling one quality weight doubles that row
  QualityMap q1b = q1;
  q1b.q[1] *= 2.0;
  const Tensor sb = pixel_similarity(f1, q1b, f2, q2);
  for (int64_t j = 0; j < 4; ++j) CHECK(sb.at(1, j) == doctest::Approx(2.0 * s.at(1, j)).epsilon(1e-12));
}

TEST_CASE("zero-norm pixels contribute zero similarity") {
  Tensor f1 = Tensor::zeros({2, 1, 2});
  Tensor f2 = Tensor::zeros({2, 1, 2});
  f1.at(0, 0, 1) = 1.0;
  f2.at(0, 0, 0) = 1.0;
  f2.at(0, 0, 1) = 1.0;
  const Tensor s = pixel_similarity(f1, uniform_quality(1, 2), f2, uniform_quality(1, 2));
  CHECK(s.at(0, 0) == 0.0);  // f1 pixel 0 is the zero vector
  CHECK(s.at(0, 1) == 0.0);
  CHECK(s.at(1, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.at(1, 1) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("matcher wrappers agree with the serial reference on small grids") {
  Rng rng(419);
  for (int64_t h = 1; h <= 4; ++h)
    for (int64_t w = 1; w <= 4; ++w)
      for (int64_t c : {1, 3, 5}) {
        const Tensor f1 = Tensor::randn({c, h, w}, rng);
        const Tensor f2 = Tensor::randn({c, h, w}, rng);
        QualityMap q1{static_cast<int>(h), static_cast<int>(w), {}};
        QualityMap q2 = q1;
        const int64_t hw = h * w;
        for (int64_t i = 0; i < hw; ++i) {
          q1.q.push_back(rng.uniform(0.05, 1.0));
          q2.q.push_back(rng.uniform(0.05, 1.0));
        }
        const Tensor s1 = pixel_similarity(f1, q1, f2, q2);
        const Tensor want1 = ref::pixel_similarity(f1, q1.q, f2, q2.q);
        const Tensor s2 = bidirectional_similarity(s1);
        const Tensor want2 = ref::bidirectional_similarity(want1);
        const auto v = bi_gmp(s2);
        const auto wantv = ref::bi_gmp(want2);
        for (int64_t i = 0; i < s1.numel(); ++i) {
          CHECK(s1[i] == doctest::Approx(want1[i]).epsilon(1e-6).scale(1.0));
          CHECK(s2[i] == doctest::Approx(want2[i]).epsilon(1e-6).scale(1.0));
        }
        for (size_t i = 0; i < v.size(); ++i)
          CHECK(v[i] == doctest::Approx(wantv[i]).epsilon(1e-6).scale(1.0));
      }
}

TEST_CASE("bidirectional map: conditional distributions sum to one") {
  Rng rng(421);
  const int64_t hw = 9;
  Tensor s1 = Tensor::randn({hw, hw}, rng);
  Tensor r_col({hw, hw}), r_row({hw, hw}), s2({hw, hw});
  kernels::bidirectional_pair(s1.data(), hw, r_col.data(), r_row.data(), s2.data());
  for (int64_t q = 0; q < hw; ++q) {
    double s = 0.0;
    for (int64_t p = 0; p < hw; ++p) s += r_col.at(p, q);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
  }
  for (int64_t p = 0; p < hw; ++p) {
    double s = 0.0;
    for (int64_t q = 0; q < hw; ++q) s += r_row.at(p, q);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
  }
  for (int64_t i = 0; i < s2.numel(); ++i) {
    CHECK(s2[i] > 0.0);
    CHECK(s2[i] < 1.0);
    CHECK(s2[i] == doctest::Approx(r_col[i] * r_row[i]).epsilon(1e-12));
  }
}

TEST_CASE("bidirectional map transposes with its input") {
  Rng rng(431);
  const int64_t n = 6;
  Tensor s1 = Tensor::randn({n, n}, rng);
  Tensor s1t({n, n});
  for (int64_t p = 0; p < n; ++p)
    for (int64_t q = 0; q < n; ++q) s1t.at(q, p) = s1.at(p, q);
  const Tensor a = bidirectional_similarity(s1);
  const Tensor b = bidirectional_similarity(s1t);
  for (int64_t p = 0; p < n; ++p)
    for (int64_t q = 0; q < n; ++q)
      CHECK(a.at(p, q) == doctest::Approx(b.at(q, p)).epsilon(1e-6).scale(1.0));
}

TEST_CASE("constant similarity collapses to the uniform product") {
  for (int64_t hw : {4, 9}) {
    Tensor s1 = Tensor::full({hw, hw}, 0.37);
    const Tensor s2 = bidirectional_similarity(s1);
    const double want = 1.0 / static_cast<double>(hw * hw);
    for (int64_t i = 0; i < s2.numel(); ++i) CHECK(s2[i] == doctest::Approx(want).epsilon(1e-9));
  }
}

TEST_CASE("single-position maps match perfectly") {
  Tensor s1({1, 1});
  s1[0] = -3.2;
  const Tensor s2 = bidirectional_similarity(s1);
  CHECK(s2[0] == doctest::Approx(1.0).epsilon(1e-12));
  const auto v = bi_gmp(s2);
  REQUIRE(v.size() == 2);
  CHECK(v[0] == doctest::Approx(1.0));
  CHECK(v[1] == doctest::Approx(1.0));
}

TEST_CASE("pooling an identity-like map gives all ones") {
  Tensor s2 = Tensor::zeros({4, 4});
  for (int64_t i = 0; i < 4; ++i) s2.at(i, i) = 1.0;
  const auto v = bi_gmp(s2);
  REQUIRE(v.size() == 8);
  for (double x : v) CHECK(x == 1.0);
}

TEST_CASE("swapping the pair swaps the pooled halves") {
  Rng rng(433);
  const Tensor f1 = Tensor::randn({4, 2, 3}, rng);
  const Tensor f2 = Tensor::randn({4, 2, 3}, rng);
  QualityMap q1{2, 3, {}}, q2{2, 3, {}};
  for (int i = 0; i < 6; ++i) {
    q1.q.push_back(rng.uniform(0.05, 1.0));
    q2.q.push_back(rng.uniform(0.05, 1.0));
  }
  const auto v12 = match_pair_vector(f1, q1, f2, q2);
  const auto v21 = match_pair_vector(f2, q2, f1, q1);
  REQUIRE(v12.size() == 12);
  REQUIRE(v21.size() == 12);
  for (int i = 0; i < 6; ++i) {
    CHECK(v12[static_cast<size_t>(i)] == doctest::Approx(v21[static_cast<size_t>(6 + i)]).epsilon(1e-9));
    CHECK(v12[static_cast<size_t>(6 + i)] == doctest::Approx(v21[static_cast<size_t>(i)]).epsilon(1e-9));
  }
}

TEST_CASE("score head computes the documented affine-sigmoid form") {
  ScoreHead head("head", 1, 2);  // input dim 2, hidden 2
  head.bn.gamma.value.fill(1.0);
  head.bn.beta.value.zero();
  head.fc1.weight.value.zero();
  head.fc1.weight.value.at(0, 0) = 1.0;
  head.fc1.weight.value.at(1, 1) = 1.0;
  head.fc1.bias.value.zero();
  head.fc2.weight.value.at(0, 0) = 1.0;
  head.fc2.weight.value.at(0, 1) = 1.0;
  head.fc2.bias.value[0] = 0.5;

  Tensor v({1, 2});
  v[0] = 0.3;
  v[1] = -0.2;
  const Tensor logits = head.forward(v, false);
  REQUIRE(logits.numel() == 1);
  const double inv = 1.0 / std::sqrt(1.0 + 1e-5);  // fresh running stats
  const double want_logit = 0.3 * inv + 0.5;       // relu kills the negative lane
  CHECK(logits[0] == doctest::Approx(want_logit).epsilon(1e-9));
  CHECK(sigmoid_scalar(logits[0]) == doctest::Approx(1.0 / (1.0 + std::exp(-want_logit))).epsilon(1e-12));
}

TEST_CASE("batched matcher equals the one-pair composition") {
  const int c = 4, fh = 2, fw = 2;
  MatcherConfig mc;
  PairMatcher matcher("m", c, fh, fw, mc);
  Rng rng(439);
  matcher.init(rng);

  const int nq = 2, ng = 3;
  const Tensor fq = Tensor::randn({nq, c, fh, fw}, rng);
  const Tensor fg = Tensor::randn({ng, c, fh, fw}, rng);
  std::vector<BodyMask> mq, mg;
  for (int i = 0; i < nq; ++i) mq.push_back(random_body_mask(16, 16, rng));
  for (int i = 0; i < ng; ++i) mg.push_back(random_body_mask(16, 16, rng));
  const Tensor qq = matcher.quality_batch(mq);
  const Tensor qg = matcher.quality_batch(mg);
  REQUIRE(qq.dim(0) == nq);
  REQUIRE(qq.dim(1) == fh * fw);

  const Tensor scores = matcher.score_pairs(fq, qq, fg, qg);
  REQUIRE(scores.dim(0) == nq);
  REQUIRE(scores.dim(1) == ng);
  for (int i = 0; i < nq; ++i)
    for (int j = 0; j < ng; ++j) {
      const double want =
          match_pair(slice_sample(fq, i), mq[static_cast<size_t>(i)], slice_sample(fg, j),
                     mg[static_cast<size_t>(j)], matcher.head, mc);
      CHECK(scores.at(i, j) == doctest::Approx(want).epsilon(1e-9));
      CHECK(scores.at(i, j) > 0.0);
      CHECK(scores.at(i, j) < 1.0);
    }
}

TEST_CASE("disabling quality weighting feeds uniform maps") {
  const int c = 3, fh = 2, fw = 2;
  MatcherConfig mc;
  mc.quality_weights = false;
  PairMatcher matcher("m", c, fh, fw, mc);
  Rng rng(443);
  matcher.init(rng);
  std::vector<BodyMask> masks{random_body_mask(16, 16, rng), random_body_mask(16, 16, rng)};
  const Tensor q = matcher.quality_batch(masks);
  for (int64_t i = 0; i < q.numel(); ++i) CHECK(q[i] == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("matcher training logits depend on every feature map") {
  const int b = 3, c = 4, fh = 2, fw = 2;
  MatcherConfig mc;
  PairMatcher matcher("m", c, fh, fw, mc);
  Rng rng(449);
  matcher.init(rng);
  Tensor f = Tensor::randn({b, c, fh, fw}, rng);
  std::vector<BodyMask> masks;
  for (int i = 0; i < b; ++i) masks.push_back(random_body_mask(16, 16, rng));
  const Tensor quality = matcher.quality_batch(masks);
  const Tensor base = matcher.forward(f, quality, false);
  REQUIRE(base.numel() == b * b);
  f.at(1, 2, 0, 1) += 0.5;
  const Tensor bumped = matcher.forward(f, quality, false);
  double moved = 0.0;
  for (int64_t i = 0; i < base.numel(); ++i) moved += std::abs(bumped[i] - base[i]);
  CHECK(moved > 0.0);
  // pairs not involving sample 1 stay fixed
  CHECK(bumped[0 * b + 0] == base[0 * b + 0]);
  CHECK(bumped[0 * b + 2] == base[0 * b + 2]);
  CHECK(bumped[2 * b + 0] == base[2 * b + 0]);
}

TEST_CASE("matching gradient flows back through the matcher correctly") {
  const int b = 2, c = 4, fh = 3, fw = 2;
  MatcherConfig mc;
  PairMatcher matcher("m", c, fh, fw, mc);
  Rng rng(457);
  matcher.init(rng);

  Tensor f = Tensor::randn({b, c, fh, fw}, rng);
  std::vector<BodyMask> masks;
  for (int i = 0; i < b; ++i) masks.push_back(random_body_mask(24, 16, rng));
  const Tensor quality = matcher.quality_batch(masks);
  BatchLabels labels;
  labels.person_ids = {0, 1};

  auto loss_of = [&] {
    const Tensor logits = matcher.forward(f, quality, true);
    return matching_loss_from_logits(logits, labels);
  };

  for (Param* p : matcher.params()) p->zero_grad();
  const Tensor logits = matcher.forward(f, quality, true);
  Tensor dlogits = Tensor::zeros(logits.shape());
  matching_loss_from_logits(logits, labels, {}, &dlogits);
  const Tensor df = matcher.backward(dlogits);
  REQUIRE(df.same_shape(f));

  const double eps = 1e-4;
  for (int64_t i = 0; i < f.numel(); ++i) {
    const double keep = f[i];
    f[i] = keep + eps;
    const double up = loss_of();
    f[i] = keep - eps;
    const double dn = loss_of();
    f[i] = keep;
    const double want = (up - dn) / (2 * eps);
    CHECK(df[i] == doctest::Approx(want).epsilon(1e-4).scale(1e-3));
  }

  auto fd_param = [&](Param& prm, int64_t i) {
    const double keep = prm.value[i];
    prm.value[i] = keep + eps;
    const double up = loss_of();
    prm.value[i] = keep - eps;
    const double dn = loss_of();
    prm.value[i] = keep;
    return (up - dn) / (2 * eps);
  };
  for (int64_t i = 0; i < matcher.head.fc2.weight.value.numel(); i += 13)
    CHECK(matcher.head.fc2.weight.grad[i] ==
          doctest::Approx(fd_param(matcher.head.fc2.weight, i)).epsilon(1e-4).scale(1e-3));
  CHECK(matcher.head.fc2.bias.grad[0] ==
        doctest::Approx(fd_param(matcher.head.fc2.bias, 0)).epsilon(1e-4).scale(1e-3));
}

// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "egfuse/scoring.hpp"
#include "test_util.hpp"

using namespace egfuse;

namespace {

/// Six hand-held arrays that make the scorer the identity on the pooled mean:
/// h = [relu(g), relu(-g)], out = h0 - h1 = g, so score(f) = sigmoid(mean(f)).
struct IdentityScorer {
  Tensor p1_w{2, 1, 1, 1}, p1_b{1, 2, 1, 1};
  Tensor p2_w{2, 2, 1, 1}, p2_b{1, 2, 1, 1};
  Tensor out_w{1, 2, 1, 1}, out_b{1, 1, 1, 1};

  IdentityScorer() {
    p1_w.at(0, 0, 0, 0) = 1.0f;
    p1_w.at(1, 0, 0, 0) = -1.0f;
    p2_w.at(0, 0, 0, 0) = 1.0f;
    p2_w.at(1, 1, 0, 0) = 1.0f;
    out_w.at(0, 0, 0, 0) = 1.0f;
    out_w.at(0, 1, 0, 0) = -1.0f;
  }

  StageScoringParams<float> view() const {
    return StageScoringParams<float>{&p1_w, &p1_b, &p2_w, &p2_b, &out_w, &out_b};
  }
};

float logit(float p) { return std::log(p / (1.0f - p)); }

/// Scalar-arithmetic re-derivation of one modality's scores: explicit pooling
/// loops and dense matrix-vector products, all in double.
std::vector<double> oracle_scores(const Tensor& f, const StageScoringParams<float>& sp) {
  const int b = f.batch(), c = f.channels(), hw = f.height() * f.width();
  const int mid = sp.p1_w->batch();
  std::vector<double> out(b, 0.0);
  for (int bi = 0; bi < b; ++bi) {
    std::vector<double> pooled(c, 0.0);
    for (int ci = 0; ci < c; ++ci) {
      double acc = 0.0;
      for (int h = 0; h < f.height(); ++h)
        for (int w = 0; w < f.width(); ++w) acc += f.at(bi, ci, h, w);
      pooled[ci] = acc / hw;
    }
    std::vector<double> h1(mid, 0.0);
    for (int m = 0; m < mid; ++m) {
      double acc = sp.p1_b->at(0, m, 0, 0);
      for (int ci = 0; ci < c; ++ci) acc += double(sp.p1_w->at(m, ci, 0, 0)) * pooled[ci];
      h1[m] = std::max(acc, 0.0);
    }
    std::vector<double> h2(mid, 0.0);
    for (int m = 0; m < mid; ++m) {
      double acc = sp.p2_b->at(0, m, 0, 0);
      for (int mi = 0; mi < mid; ++mi) acc += double(sp.p2_w->at(m, mi, 0, 0)) * h1[mi];
      h2[m] = acc;
    }
    double z = sp.out_b->at(0, 0, 0, 0);
    for (int m = 0; m < mid; ++m) z += double(sp.out_w->at(0, m, 0, 0)) * h2[m];
    out[bi] = 1.0 / (1.0 + std::exp(-z));
  }
  return out;
}

}  // namespace

TEST_CASE("zero projection parameters give flat 0.5 scores and drop index 0") {
  EncoderConfig cfg;
  cfg.num_classes = 4;
  auto params = build_model_params<float>(cfg, 99);
  for (auto& [name, p] : params.table()) {
    if (name.rfind("score.", 0) == 0) p.value.fill(0.0f);
  }
  auto sp = StageScoringParams<float>::from(params, 0);

  auto rng = testutil::rng_for(5);
  std::vector<Tensor> feats;
  for (int k = 0; k < 3; ++k) feats.push_back(testutil::random_tensor<float>(2, 8, 4, 4, rng));

  auto report = score_modalities(feats, sp);
  for (const auto& row : report.per_sample)
    for (float s : row) CHECK(s == 0.5f);
  for (float m : report.batch_mean) CHECK(m == doctest::Approx(0.5f));
  CHECK(report.drop_index == 0);
}

TEST_CASE("argmin over batch means picks the weakest modality") {
  IdentityScorer id;
  // Constant feature maps whose means are the logits of the intended scores.
  Tensor f0(2, 1, 3, 3, logit(0.8f));
  Tensor f1(2, 1, 3, 3, logit(0.3f));
  auto report = score_modalities<float>({f0, f1}, id.view());

  CHECK(report.batch_mean[0] == doctest::Approx(0.8f).epsilon(1e-5));
  CHECK(report.batch_mean[1] == doctest::Approx(0.3f).epsilon(1e-5));
  CHECK(report.drop_index == 1);
}

TEST_CASE("rankings: stable ties and sort oracle") {
  IdentityScorer id;

  SUBCASE("equal means keep input order") {
    Tensor a(1, 1, 2, 2, logit(0.3f));
    Tensor b(1, 1, 2, 2, logit(0.3f));
    Tensor c(1, 1, 2, 2, logit(0.9f));
    auto report = score_modalities<float>({a, b, c}, id.view());
    CHECK(rank_modalities(report) == std::vector<int>{0, 1, 2});
    CHECK(report.drop_index == 0);  // lowest index on the tie
  }

  SUBCASE("distinct means sort ascending") {
    Tensor a(1, 1, 2, 2, logit(0.9f));
    Tensor b(1, 1, 2, 2, logit(0.1f));
    Tensor c(1, 1, 2, 2, logit(0.5f));
    auto report = score_modalities<float>({a, b, c}, id.view());
    CHECK(rank_modalities(report) == std::vector<int>{1, 2, 0});
  }

  SUBCASE("random means match a comparison-sort oracle") {
    auto rng = testutil::rng_for(17);
    for (int trial = 0; trial < 50; ++trial) {
      const int n = 2 + int(rng() % 5);
      ScoreReportT<float> report;
      report.batch_mean.resize(n);
      std::uniform_real_distribution<float> dist(0.01f, 0.99f);
      for (auto& m : report.batch_mean) m = dist(rng);
      auto order = rank_modalities(report);

      std::vector<int> expect(n);
      std::iota(expect.begin(), expect.end(), 0);
      std::stable_sort(expect.begin(), expect.end(), [&](int x, int y) {
        return report.batch_mean[x] < report.batch_mean[y];
      });
      CHECK(order == expect);
    }
  }
}

TEST_CASE("random instances match the scalar oracle") {
  auto rng = testutil::rng_for(31337);
  for (int trial = 0; trial < 200; ++trial) {
    const int b = 1 + int(rng() % 4);
    const int c = 4 * (1 + int(rng() % 4));  // 4..16, divisible for the bottleneck
    const int n = 1 + int(rng() % 5);
    const int h = 2 + int(rng() % 4);
    const int w = 2 + int(rng() % 4);

    EncoderConfig cfg;
    cfg.num_stages = 1;
    cfg.channels_per_stage = {c};
    cfg.num_classes = 2;
    auto params = build_model_params<float>(cfg, 1000 + trial);
    auto sp = StageScoringParams<float>::from(params, 0);

    std::vector<Tensor> feats;
    for (int k = 0; k < n; ++k)
      feats.push_back(testutil::random_tensor<float>(b, c, h, w, rng, -2.0, 2.0));

    auto report = score_modalities(feats, sp);

    int expect_drop = 0;
    std::vector<double> mean_oracle(n, 0.0);
    for (int k = 0; k < n; ++k) {
      auto expect = oracle_scores(feats[k], sp);
      for (int bi = 0; bi < b; ++bi) {
        CHECK(testutil::rel_err(report.per_sample[bi][k], expect[bi]) < 1e-6);
        CHECK(report.per_sample[bi][k] > 0.0f);
        CHECK(report.per_sample[bi][k] < 1.0f);
        mean_oracle[k] += expect[bi] / b;
      }
      CHECK(testutil::rel_err(report.batch_mean[k], mean_oracle[k]) < 1e-6);
      if (mean_oracle[k] < mean_oracle[expect_drop]) expect_drop = k;
    }
    CHECK(report.drop_index == expect_drop);
  }
}

TEST_CASE("permutation equivariance of score columns") {
  EncoderConfig cfg;
  cfg.num_classes = 4;
  auto params = build_model_params<float>(cfg, 7);
  auto sp = StageScoringParams<float>::from(params, 0);

  auto rng = testutil::rng_for(11);
  std::vector<Tensor> feats;
  for (int k = 0; k < 4; ++k) feats.push_back(testutil::random_tensor<float>(3, 8, 5, 5, rng));
  auto base = score_modalities(feats, sp);

  const std::vector<int> perm = {2, 0, 3, 1};
  std::vector<Tensor> shuffled;
  for (int p : perm) shuffled.push_back(feats[p]);
  auto moved = score_modalities(shuffled, sp);

  for (int k = 0; k < 4; ++k) {
    CHECK(moved.batch_mean[k] == base.batch_mean[perm[k]]);
    for (int bi = 0; bi < 3; ++bi) CHECK(moved.per_sample[bi][k] == base.per_sample[bi][perm[k]]);
  }
  // drop_index maps through the permutation.
  CHECK(perm[moved.drop_index] == base.drop_index);
}

TEST_CASE("scores depend on features only through the channel means") {
  EncoderConfig cfg;
  cfg.num_classes = 4;
  auto params = build_model_params<float>(cfg, 23);
  auto sp = StageScoringParams<float>::from(params, 0);

  auto rng = testutil::rng_for(29);
  Tensor a = testutil::random_tensor<float>(1, 8, 4, 4, rng);
  // Same multiset of values per channel, different spatial arrangement.
  Tensor b = a;
  for (int c = 0; c < 8; ++c) {
    std::vector<float> vals;
    for (int h = 0; h < 4; ++h)
      for (int w = 0; w < 4; ++w) vals.push_back(a.at(0, c, h, w));
    std::shuffle(vals.begin(), vals.end(), rng);
    int i = 0;
    for (int h = 0; h < 4; ++h)
      for (int w = 0; w < 4; ++w) b.at(0, c, h, w) = vals[i++];
  }

  auto ra = score_modalities<float>({a}, sp);
  auto rb = score_modalities<float>({b}, sp);
  CHECK(testutil::rel_err(ra.per_sample[0][0], rb.per_sample[0][0]) < 1e-5);
}

TEST_CASE("single-element batches agree with batched scoring") {
  EncoderConfig cfg;
  cfg.num_classes = 4;
  auto params = build_model_params<float>(cfg, 41);
  auto sp = StageScoringParams<float>::from(params, 0);

  auto rng = testutil::rng_for(43);
  Tensor batch = testutil::random_tensor<float>(2, 8, 4, 4, rng);
  auto both = score_modalities<float>({batch}, sp);

  // For B=1 the mean equals the only row.
  for (int bi = 0; bi < 2; ++bi) {
    Tensor solo(1, 8, 4, 4);
    std::copy(batch.data() + bi * 8 * 16, batch.data() + (bi + 1) * 8 * 16, solo.data());
    auto one = score_modalities<float>({solo}, sp);
    CHECK(one.batch_mean[0] == one.per_sample[0][0]);
    CHECK(one.per_sample[0][0] == doctest::Approx(both.per_sample[bi][0]).epsilon(1e-6));
  }
}

TEST_CASE("saturated logits still stay strictly inside (0,1)") {
  IdentityScorer id;
  Tensor hot(1, 1, 2, 2, 500.0f);
  Tensor cold(1, 1, 2, 2, -500.0f);
  auto report = score_modalities<float>({hot, cold}, id.view());
  CHECK(report.per_sample[0][0] < 1.0f);
  CHECK(report.per_sample[0][0] > 0.99f);
  CHECK(report.per_sample[0][1] > 0.0f);
  CHECK(report.per_sample[0][1] < 0.01f);
  CHECK(report.drop_index == 1);
}

TEST_CASE("scoring input validation") {
  IdentityScorer id;
  CHECK_THROWS_AS(score_modalities<float>({}, id.view()), ConfigError);

  Tensor a(1, 1, 2, 2, 0.0f);
  Tensor b(1, 1, 3, 3, 0.0f);
  CHECK_THROWS_AS(score_modalities<float>({a, b}, id.view()), ShapeError);

  Tensor wide(1, 3, 2, 2, 0.0f);  // three channels against a one-channel projection
  CHECK_THROWS_AS(score_modalities<float>({wide}, id.view()), ShapeError);
}

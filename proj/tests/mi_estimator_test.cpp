// Copyright 2026 The lnl Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <numeric>
#include <set>

#include "gtest/gtest.h"
#include "test_util.hpp"

namespace lnl {
namespace {

using testing::random_matrix;

EstimatorParams tiny_params(int input_dim, std::uint64_t seed, int se_dim = 3) {
  TrainConfig cfg;
  cfg.hidden_dim = 4;
  cfg.se_dim = se_dim;
  return init_estimator(input_dim, cfg, seed);
}

void set_bilinear(EstimatorParams& p, Matrix w, double b) {
  p.store.value(est::kBilinear) = std::move(w);
  p.store.value(est::kBias)(0, 0) = b;
}

Dataset separated(int n, int classes, std::uint64_t seed) {
  SyntheticSpec s;
  s.nodes = n;
  s.classes = classes;
  s.feature_dim = 60;
  s.words_per_node = 8;
  s.topic_words = 10;
  s.signal = 0.9;
  s.seed = seed;
  return make_synthetic(s);
}

TEST(SelfEmbedTest, ShapeAndZeroWeights) {
  const Matrix x = random_matrix(6, 5, 1, 0, 1);
  EstimatorParams p = tiny_params(5, 2);
  EXPECT_EQ(self_embed(x, p).z.rows(), 6u);
  EXPECT_EQ(self_embed(x, p).z.cols(), 3u);
  EXPECT_EQ(self_embed(x, p).z, self_embed(x, p).z);
  for (auto& [_, param] : p.store) param.value.set_zero();
  EXPECT_EQ(self_embed(x, p).z, Matrix(6, 3));
  EXPECT_THROW(self_embed(random_matrix(6, 4, 1), p), std::invalid_argument);
}

TEST(SelfEmbedTest, DefaultWidthIs128) {
  const TrainConfig cfg;
  const EstimatorParams p = init_estimator(10, cfg, 1);
  EXPECT_EQ(self_embed(random_matrix(3, 10, 4), p).z.cols(), 128u);
}

TEST(MiScoreTest, HandExamples) {
  EstimatorParams p = tiny_params(2, 1, 2);
  const Matrix z(2, 2, std::vector<double>{1, 1, 1, -1});
  set_bilinear(p, Matrix(2, 2), 0.0);
  EXPECT_DOUBLE_EQ(mi_score(0, 1, z, p), 0.5);
  EXPECT_DOUBLE_EQ(pairwise_mi(0, 1, z, p), 0.0);

  set_bilinear(p, Matrix(2, 2, std::vector<double>{1, 0, 0, 1}), 0.0);
  EXPECT_DOUBLE_EQ(mi_score(0, 0, z, p), sigmoid(2.0));

  // W = diag(1, 2): z_u' W z_v = 1 - 2 = -1 and z_v' W z_u = -1, so the
  // symmetrised logit is -1.
  set_bilinear(p, Matrix(2, 2, std::vector<double>{1, 0, 0, 2}), 0.0);
  EXPECT_DOUBLE_EQ(pairwise_mi(0, 1, z, p), -1.0);
  set_bilinear(p, Matrix(2, 2, std::vector<double>{1, 3, 0, 2}), 0.25);
  // z_u' W z_v = 1 - 3 - 2 = -4, z_v' W z_u = 1 + 3 - 2 = 2.
  EXPECT_DOUBLE_EQ(pairwise_mi(0, 1, z, p), 0.5 * (-4.0 + 2.0) + 0.25);
}

TEST(MiScoreTest, PairwiseMiIsSymmetricAndEqualsSoftplusForm) {
  EstimatorParams p = tiny_params(4, 3, 4);
  p.store.value(est::kBias)(0, 0) = 0.3;
  const Matrix z = random_matrix(5, 4, 9);
  for (NodeId u = 0; u < 5; ++u)
    for (NodeId v = 0; v < 5; ++v) {
      const double l = pairwise_mi(u, v, z, p);
      EXPECT_DOUBLE_EQ(l, pairwise_mi(v, u, z, p));
      EXPECT_NEAR(softplus(l) - softplus(-l), l, 1e-12);
      EXPECT_NEAR(sigmoid(l), mi_score(u, v, z, p), 1e-15);
    }
  EXPECT_DOUBLE_EQ(0.8, softplus(0.8) - softplus(-0.8));
}

TEST(SamplePairsTest, LabelsAndCounts) {
  std::vector<ClassId> labels(40);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<ClassId>(i % 3);
  std::vector<NodeId> anchors(30);
  std::iota(anchors.begin(), anchors.end(), 0);
  const PairBatch b = sample_pairs(anchors, labels, 5, 7);
  EXPECT_EQ(b.size(), 300u);
  for (std::size_t i = 0; i < b.size(); ++i) {
    EXPECT_NE(b.anchors[i], b.partners[i]);
    const bool same = labels[static_cast<std::size_t>(b.anchors[i])] == labels[static_cast<std::size_t>(b.partners[i])];
    EXPECT_EQ(same, b.positive[i] != 0);
  }
  // Without replacement: each anchor's 5 positives are distinct.
  for (std::size_t a = 0; a < 30; ++a) {
    std::set<NodeId> pos;
    for (std::size_t i = 0; i < b.size(); ++i)
      if (b.anchors[i] == static_cast<NodeId>(a) && b.positive[i]) pos.insert(b.partners[i]);
    EXPECT_EQ(pos.size(), 5u);
  }
  EXPECT_EQ(sample_pairs(anchors, labels, 5, 7), b);
  EXPECT_NE(sample_pairs(anchors, labels, 5, 8), b);
}

TEST(SamplePairsTest, SmallPoolsAndLoneAnchors) {
  // Class 0: {0, 1}; class 1: {2}. Node 2 has no peer, so negatives only.
  const std::vector<ClassId> labels = {0, 0, 1};
  const std::vector<NodeId> anchors = {0, 1, 2};
  const PairBatch b = sample_pairs(anchors, labels, 3, 1);
  std::size_t lone_pos = 0, lone_neg = 0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (b.anchors[i] == 2) (b.positive[i] ? lone_pos : lone_neg)++;
    if (b.positive[i]) {
      EXPECT_EQ(labels[static_cast<std::size_t>(b.partners[i])], labels[static_cast<std::size_t>(b.anchors[i])]);
    }
  }
  EXPECT_EQ(lone_pos, 0u);
  EXPECT_EQ(lone_neg, 3u);
  EXPECT_EQ(b.size(), 3u + 3u + 3u + 3u + 3u);
  EXPECT_THROW(sample_pairs(std::vector<NodeId>{0, 1}, labels, 3, 1), std::invalid_argument);
}

TEST(EstimationLossTest, ReferenceValues) {
  EstimatorParams p = tiny_params(2, 1, 2);
  const Matrix z = random_matrix(4, 2, 3);
  PairBatch b{{0, 1, 2}, {1, 2, 3}, {1, 0, 1}};
  set_bilinear(p, Matrix(2, 2), 0.0);
  EXPECT_NEAR(estimation_loss(b, z, p), std::log(2.0), 1e-15);
  // Positives pushed to +inf logits and negatives to -inf: loss -> 0.
  const Matrix zz(4, 1, std::vector<double>{1, 1, -1, 1});
  EstimatorParams q = tiny_params(2, 1, 1);
  set_bilinear(q, Matrix(1, 1, std::vector<double>{40.0}), 0.0);
  PairBatch sep{{0, 1, 0}, {1, 3, 2}, {1, 1, 0}};
  EXPECT_LT(estimation_loss(sep, zz, q), 1e-15);
  EXPECT_THROW(estimation_loss(PairBatch{}, z, p), std::invalid_argument);
}

TEST(EstimationLossTest, GradientMatchesFiniteDifferences) {
  const Matrix x = random_matrix(6, 5, 21, 0, 1, 0.3);
  std::vector<ClassId> labels = {0, 1, 0, 1, 2, 2};
  std::vector<NodeId> nodes = {0, 1, 2, 3, 4, 5};
  const PairBatch batch = sample_pairs(nodes, labels, 2, 4);
  EstimatorParams p = tiny_params(5, 6, 3);
  p.store.value(est::kBias)(0, 0) = 0.2;
  Rng mrng(5);
  const Matrix mask = dropout_mask(6, 4, 0.25, mrng);
  auto f = [&](ParameterStore& s, bool with_grad) {
    const MlpTrace t = mlp_forward(x, s, mask);
    Matrix dz;
    const double loss = estimation_loss_backward(batch, t.z, s, dz);
    if (with_grad) {
      mlp_backward(x, t, dz, s);
    } else {
      s.zero_grad();
    }
    return loss;
  };
  EXPECT_LT(grad_check(p.store, f, 200, 3).max_rel_error, 1e-4);
  // The backward pass reports the same loss as the forward-only function.
  Matrix dz;
  EstimatorParams p2 = p;
  EXPECT_NEAR(estimation_loss_backward(batch, self_embed(x, p2).z, p2.store, dz),
              estimation_loss(batch, self_embed(x, p).z, p), 1e-14);
}

TEST(CentroidTest, SingleMemberAndBruteForceArgmax) {
  const Matrix z = random_matrix(7, 3, 2);
  const std::vector<ClassId> labels = {0, 1, 1, 2, 2, 2, kUnlabeled};
  const std::vector<NodeId> labeled = {0, 1, 2, 3, 4, 5};
  const Matrix c = class_centroids(z, labeled, labels, 3);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(c(0, j), z(0, j));
  EXPECT_THROW(class_centroids(z, labeled, labels, 4), std::invalid_argument);

  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    EstimatorParams p = tiny_params(3, seed, 3);
    const Matrix cs = random_matrix(4, 3, seed + 1000);
    const PseudoLabel pl = pseudo_label(6, cs, z, p);
    int best = 0;
    for (int k = 1; k < 4; ++k)
      if (pairwise_mi(z.row(6), cs.row(static_cast<std::size_t>(k)), p) >
          pairwise_mi(z.row(6), cs.row(static_cast<std::size_t>(best)), p))
        best = k;
    EXPECT_EQ(pl.label, best);
    EXPECT_DOUBLE_EQ(pl.confidence, pairwise_mi(z.row(6), cs.row(static_cast<std::size_t>(best)), p));
  }
}

TEST(CentroidTest, TiesGoToLowerClass) {
  const Matrix z = random_matrix(2, 3, 4);
  EstimatorParams p = tiny_params(3, 1, 3);
  Matrix cs(3, 3);
  for (std::size_t j = 0; j < 3; ++j) cs(1, j) = cs(2, j) = 5.0 * z(0, j);
  // Make class 1 and 2 tie above class 0 (zero centroid gives MI = bias).
  set_bilinear(p, Matrix(3, 3, std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0, 1}), 0.0);
  EXPECT_EQ(pseudo_label(0, cs, z, p).label, 1);
}

TEST(EstimatorTrainingTest, SeparatesClasses) {
  const Dataset d = separated(60, 2, 5);
  TrainConfig cfg = testing::small_config(2);
  cfg.hidden_dim = 16;
  cfg.se_dim = 16;
  std::vector<NodeId> train(40);
  std::iota(train.begin(), train.end(), 0);
  EstimatorParams p = init_estimator(static_cast<int>(d.feature_dim()), cfg, cfg.seed);
  train_estimator(p, d.features(), train, d.labels(), cfg, 0, 200);
  const Matrix z = self_embed(d.features(), p).z;
  double same = 0, diff = 0;
  int ns = 0, nd = 0;
  for (NodeId u = 40; u < 60; ++u)
    for (NodeId v = 40; v < 60; ++v) {
      if (u == v) continue;
      const double s = mi_score(u, v, z, p);
      if (d.label(u) == d.label(v)) same += s, ++ns;
      else diff += s, ++nd;
    }
  EXPECT_GE(same / ns - diff / nd, 0.2);
}

TEST(M3sTest, PoolGrowsByMinOfTAndRemaining) {
  const Dataset d = separated(60, 3, 9);
  const Split split = stratified_split(d, 1);
  TrainConfig cfg = testing::small_config(4);
  cfg.m3s_stages = 4;
  cfg.m3s_warmup_epochs = 5;
  cfg.m3s_stage_epochs = 2;
  const M3sResult r = m3s_train(d.features(), d.labels(), d.class_count(), split.train, cfg);
  const std::size_t t = static_cast<std::size_t>(std::ceil(0.05 * 60));
  ASSERT_EQ(r.pool_sizes.size(), 5u);
  EXPECT_EQ(r.pool_sizes[0], split.train.size());
  for (std::size_t s = 1; s < r.pool_sizes.size(); ++s) {
    EXPECT_EQ(r.pool_sizes[s] - r.pool_sizes[s - 1], std::min(t, 60 - r.pool_sizes[s - 1]));
  }
  // True labels of the train split are never overwritten.
  for (NodeId u : split.train) EXPECT_EQ(r.pool_labels[static_cast<std::size_t>(u)], d.label(u));

  cfg.m3s_top_t = 10;  // 24 unlabeled nodes: 10, 10, 4, 0
  const M3sResult big = m3s_train(d.features(), d.labels(), d.class_count(), split.train, cfg);
  const std::vector<std::size_t> expect = {36, 46, 56, 60, 60};
  EXPECT_EQ(big.pool_sizes, expect);
}

TEST(M3sTest, FullyLabeledEqualsPlainTraining) {
  const Dataset d = separated(30, 2, 3);
  std::vector<NodeId> all(30);
  std::iota(all.begin(), all.end(), 0);
  TrainConfig cfg = testing::small_config(6);
  cfg.m3s_warmup_epochs = 7;
  cfg.m3s_stage_epochs = 4;
  cfg.m3s_stages = 3;
  const M3sResult r = m3s_train(d.features(), d.labels(), d.class_count(), all, cfg);
  EstimatorParams plain = init_estimator(static_cast<int>(d.feature_dim()), cfg, cfg.seed);
  train_estimator(plain, d.features(), all, d.labels(), cfg, 0, 7 + 3 * 4);
  for (const auto& [name, param] : plain.store) EXPECT_EQ(r.params.store.value(name), param.value) << name;
  EXPECT_EQ(r.embeddings.z, self_embed(d.features(), plain).z);
}

TEST(M3sTest, Deterministic) {
  const Dataset d = separated(40, 2, 8);
  const Split split = stratified_split(d, 2);
  const TrainConfig cfg = testing::small_config(8);
  const M3sResult a = m3s_train(d.features(), d.labels(), d.class_count(), split.train, cfg);
  const M3sResult b = m3s_train(d.features(), d.labels(), d.class_count(), split.train, cfg);
  EXPECT_EQ(a.embeddings.z, b.embeddings.z);
  EXPECT_EQ(a.pool, b.pool);
  EXPECT_EQ(a.pool_labels, b.pool_labels);
}

TEST(M3sTest, StagesDoNotHurtHeldOutLoss) {
  const Dataset d = separated(120, 2, 12);
  const Split split = stratified_split(d, 3);
  TrainConfig cfg = testing::small_config(3);
  cfg.hidden_dim = 16;
  cfg.se_dim = 16;
  cfg.m3s_warmup_epochs = 60;
  cfg.m3s_stage_epochs = 30;
  cfg.m3s_stages = 4;
  const M3sResult full = m3s_train(d.features(), d.labels(), d.class_count(), split.train, cfg);
  cfg.m3s_stages = 0;
  const M3sResult warm = m3s_train(d.features(), d.labels(), d.class_count(), split.train, cfg);
  const PairBatch held_out = sample_pairs(split.test, d.labels(), 5, 99);
  EXPECT_LE(estimation_loss(held_out, full.embeddings.z, full.params),
            estimation_loss(held_out, warm.embeddings.z, warm.params));
}

TEST(PersistenceTest, RoundTripIsExact) {
  const Matrix x = random_matrix(5, 4, 1, 0, 1);
  const EstimatorParams p = tiny_params(4, 3);
  const SelfEmbeddings se{self_embed(x, p).z, EmbeddingSource::kMean1Hop};
  const auto path = testing::temp_dir("estimator") / "est.txt";
  save_estimator(path, p, se);
  const auto [q, se2] = load_estimator(path);
  for (const auto& [name, param] : p.store) EXPECT_EQ(q.store.value(name), param.value) << name;
  EXPECT_EQ(se2.z, se.z);
  EXPECT_EQ(se2.source, EmbeddingSource::kMean1Hop);
  EXPECT_THROW(load_estimator(path.parent_path() / "nope.txt"), std::runtime_error);
}

}  // namespace
}  // namespace lnl

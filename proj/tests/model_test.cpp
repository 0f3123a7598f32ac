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

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gtest/gtest.h"
#include "test_util.hpp"

namespace lnl {
namespace {

using testing::max_abs_diff;
using testing::random_matrix;

NeighborhoodMap map_of(std::vector<std::vector<NodeId>> lists) {
  NeighborhoodMap nm;
  nm.lists = std::move(lists);
  return nm;
}

/// Everything the model needs on the 8-node toy graph.
struct ToyState {
  Dataset d = testing::toy8();
  Matrix z = random_matrix(8, 4, 77);
  NeighborhoodMap local = map_of({{0, 1, 7}, {0, 1, 7}, {2, 3}, {2, 3}, {4, 5, 6}, {4, 5, 6}, {4, 5, 6}, {0, 1, 7}});
  NeighborhoodMap non_local = map_of({{0, 2, 4, 6}, {1, 3, 5, 7}, {0, 2, 4, 6}, {1, 3, 5, 7},
                                      {0, 2, 4, 6}, {1, 3, 5, 7}, {0, 2, 4, 6}, {1, 3, 5, 7}});
  Split split{{0, 1, 2, 3, 4}, {5, 6}, {7}, 0};
};

TrainConfig toy_config() {
  TrainConfig c;
  c.hidden_dim = 5;
  c.heads = 2;
  c.agg_layers = 2;
  c.seed = 4;
  return c;
}

ParameterStore attention_store(std::size_t se, std::size_t att, int heads, std::uint64_t seed) {
  ParameterStore s;
  Rng rng(seed);
  add_attention_params(s, "t", heads, se, att, rng);
  return s;
}

TEST(AttentionTest, CoefficientsAreDistributions) {
  const Matrix z = random_matrix(6, 3, 1);
  const auto nm = map_of({{0, 1, 2}, {1}, {0, 2, 3, 4, 5}, {3, 4}, {4, 0}, {5, 1, 2}});
  const auto csr = NeighborCsr::from(nm);
  const auto store = attention_store(3, 4, 3, 2);
  const AttentionTrace t = attention_forward(z, csr, store, "t", 3);
  for (std::size_t u = 0; u < csr.nodes(); ++u) {
    for (const auto& alpha : t.alpha) {
      double s = 0.0;
      for (std::size_t k = csr.offsets[u]; k < csr.offsets[u + 1]; ++k) {
        EXPECT_GE(alpha[k], 0.0);
        s += alpha[k];
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
    double s = 0.0;
    for (std::size_t k = csr.offsets[u]; k < csr.offsets[u + 1]; ++k) s += t.coef[k];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  EXPECT_THROW(NeighborCsr::from(map_of({{0}, {}})), std::invalid_argument);
}

TEST(AttentionTest, EqualLogitsGiveNeighborhoodMean) {
  const Matrix z = random_matrix(4, 3, 1);
  const Matrix f = random_matrix(4, 2, 2, 0, 1);
  auto store = attention_store(3, 4, 2, 3);
  for (int h = 0; h < 2; ++h) store.value(head_attn_name("t", h)).set_zero();
  const auto nm = map_of({{0, 1, 3}, {1, 2}, {2}, {0, 1, 2, 3}});
  const Matrix out = attentive_aggregate(z, f, nm, store, "t", 2);
  for (std::size_t u = 0; u < 4; ++u)
    for (std::size_t j = 0; j < 2; ++j) {
      double mean = 0.0;
      for (NodeId v : nm[u]) mean += f(static_cast<std::size_t>(v), j);
      EXPECT_NEAR(out(u, j), mean / static_cast<double>(nm[u].size()), 1e-15);
    }
}

TEST(AttentionTest, HandEvaluatedThreeNodeNeighborhood) {
  // se = 1, att = 1, one head: W = [2], a_src = [0.5], a_dst = [-1].
  const Matrix z(3, 1, std::vector<double>{1.0, -0.5, 2.0});
  const Matrix f(3, 1, std::vector<double>{1.0, 2.0, 3.0});
  ParameterStore store;
  store.add(head_weight_name("t", 0), Matrix(1, 1, std::vector<double>{2.0}));
  store.add(head_attn_name("t", 0), Matrix(2, 1, std::vector<double>{0.5, -1.0}));
  const auto nm = map_of({{0, 1, 2}, {1}, {2}});
  const Matrix out = attentive_aggregate(z, f, nm, store, "t", 1);
  // e_0v = LeakyReLU(0.5 * 2 * z_0 - 1 * 2 * z_v) = LeakyReLU(1 - 2 z_v):
  //   v=0: -1 -> -0.2,  v=1: 2,  v=2: -3 -> -0.6.
  const double e0 = -0.2, e1 = 2.0, e2 = -0.6;
  const double zsum = std::exp(e0) + std::exp(e1) + std::exp(e2);
  const double expect = (std::exp(e0) * 1.0 + std::exp(e1) * 2.0 + std::exp(e2) * 3.0) / zsum;
  EXPECT_NEAR(out(0, 0), expect, 1e-14);
  EXPECT_DOUBLE_EQ(out(1, 0), 2.0);
}

TEST(AttentionTest, OrderInvariant) {
  const Matrix z = random_matrix(6, 3, 5);
  const Matrix f = random_matrix(6, 4, 6);
  const auto store = attention_store(3, 4, 3, 7);
  const auto a = attentive_aggregate(z, f, map_of({{0, 1, 2, 5}, {1, 3}, {2, 4, 0}, {3}, {4, 5}, {5, 0}}), store, "t", 3);
  const auto b = attentive_aggregate(z, f, map_of({{5, 2, 0, 1}, {3, 1}, {0, 4, 2}, {3}, {5, 4}, {0, 5}}), store, "t", 3);
  EXPECT_LT(max_abs_diff(a, b), 1e-14);
}

TEST(TowerTest, ShapeNonnegativeAndSingleton) {
  const ToyState s;
  TrainConfig cfg = toy_config();
  ParameterStore store;
  Rng rng(1);
  for (int l = 0; l < 2; ++l) add_attention_params(store, "x.l" + std::to_string(l), 2, 4, 5, rng);
  store.add("x.out", glorot_uniform(6, 5, rng));
  const auto csr = NeighborCsr::from(s.local);
  for (bool factored : {false, true}) {
    const TowerTrace t = tower_forward(s.d.features(), s.z, csr, store, "x", 2, 2, factored);
    EXPECT_EQ(t.out.rows(), 8u);
    EXPECT_EQ(t.out.cols(), 5u);
    EXPECT_TRUE(all_nonnegative(t.out));
  }
  // Singleton lists: one aggregation is the identity on nonnegative rows.
  std::vector<std::vector<NodeId>> singles(8);
  for (NodeId u = 0; u < 8; ++u) singles[static_cast<std::size_t>(u)] = {u};
  const Matrix one = attentive_aggregate(s.z, s.d.features(), map_of(singles), store, "x.l0", 2);
  EXPECT_EQ(one, s.d.features());
  (void)cfg;
}

TEST(FinalEmbeddingTest, WidthAndZeroWeight) {
  const Matrix x = random_matrix(3, 4, 1), hl = random_matrix(3, 2, 2), hn = random_matrix(3, 2, 3);
  EXPECT_EQ(final_embedding(x, hl, hn, Matrix(8, 5)), Matrix(3, 5));
  EXPECT_THROW(final_embedding(x, hl, hn, Matrix(7, 5)), std::invalid_argument);
  const Matrix w = random_matrix(8, 5, 4);
  const Matrix* parts[] = {&x, &hl, &hn};
  EXPECT_EQ(final_embedding(x, hl, hn, w), relu(testing::naive_matmul(hconcat(parts), w)));
}

TEST(LnlModelTest, FusionWidthAndShapes) {
  const ToyState s;
  LnlModel m(s.d.features(), s.z, &s.local, &s.non_local, AggregationMode::kBiLevel, 2, toy_config());
  EXPECT_EQ(m.params().value("fuse.w").rows(), 6u + 2u * 5u);
  const ModelOutput out = m.forward(false, 0);
  EXPECT_EQ(out.h_final.cols(), 5u);
  EXPECT_EQ(out.logits.rows(), 8u);
  EXPECT_EQ(out.logits.cols(), 2u);
  EXPECT_TRUE(all_finite(out.logits));
}

TEST(LnlModelTest, FactoredMatchesGeneral) {
  const ToyState s;
  for (auto mode : {AggregationMode::kLocal, AggregationMode::kNonLocal, AggregationMode::kBiLevel}) {
    LnlModel a(s.d.features(), s.z, &s.local, &s.non_local, mode, 2, toy_config(), true);
    LnlModel b(s.d.features(), s.z, &s.local, &s.non_local, mode, 2, toy_config(), false);
    EXPECT_LT(max_abs_diff(a.logits(true, 3), b.logits(true, 3)), 1e-12) << to_string(mode);
    a.params().zero_grad();
    b.params().zero_grad();
    Matrix d;
    mean_cross_entropy(a.logits(true, 3), s.split.train, s.d.labels(), &d);
    a.backward(d);
    mean_cross_entropy(b.logits(true, 3), s.split.train, s.d.labels(), &d);
    b.backward(d);
    for (const auto& [name, p] : a.params()) EXPECT_LT(max_abs_diff(p.grad, b.params().at(name).grad), 1e-12) << name;
  }
  Matrix neg = s.d.features();
  neg(0, 0) = -1.0;
  EXPECT_THROW(LnlModel(neg, s.z, &s.local, &s.non_local, AggregationMode::kBiLevel, 2, toy_config(), true),
               std::invalid_argument);
}

TEST(LnlModelTest, GradientMatchesFiniteDifferences) {
  const ToyState s;
  for (bool factored : {true, false}) {
    for (auto mode : {AggregationMode::kLocal, AggregationMode::kBiLevel}) {
      LnlModel m(s.d.features(), s.z, &s.local, &s.non_local, mode, 2, toy_config(), factored);
      auto f = [&](ParameterStore&, bool with_grad) {
        Matrix d;
        const double loss = mean_cross_entropy(m.logits(true, 5), s.split.train, s.d.labels(), with_grad ? &d : nullptr);
        if (with_grad) m.backward(d);
        return loss;
      };
      const auto r = grad_check(m.params(), f, 400, 11, 1e-6);
      EXPECT_LT(r.max_rel_error, 1e-3) << "factored " << factored << " mode " << to_string(mode);
    }
  }
}

TEST(LnlModelTest, LocalModeNeverReadsNonLocalMap) {
  const ToyState s;
  // The non-local map is absent: construction and training must not need it.
  LnlModel m(s.d.features(), s.z, &s.local, nullptr, AggregationMode::kLocal, 2, toy_config());
  EXPECT_FALSE(m.uses_non_local());
  EXPECT_EQ(m.forward(false, 0).h_final.rows(), 8u);
  EXPECT_EQ(m.non_local_embedding(), Matrix(8, 5));
  EXPECT_THROW(LnlModel(s.d.features(), s.z, &s.local, nullptr, AggregationMode::kBiLevel, 2, toy_config()),
               std::invalid_argument);
  LnlModel nl(s.d.features(), s.z, nullptr, &s.non_local, AggregationMode::kNonLocal, 2, toy_config());
  nl.forward(false, 0);
  EXPECT_EQ(nl.local_embedding(), Matrix(8, 5));
}

TEST(LnlModelTest, BiLevelDiffersFromLocal) {
  const ToyState s;
  LnlModel bi(s.d.features(), s.z, &s.local, &s.non_local, AggregationMode::kBiLevel, 2, toy_config());
  LnlModel lo(s.d.features(), s.z, &s.local, &s.non_local, AggregationMode::kLocal, 2, toy_config());
  EXPECT_GT(max_abs_diff(bi.logits(false, 0), lo.logits(false, 0)), 1e-6);
  EXPECT_EQ(bi.logits(false, 0), bi.logits(false, 0));
}

TEST(MlpClassifierTest, GradientMatchesFiniteDifferences) {
  const Matrix x = random_matrix(6, 4, 3);
  const std::vector<ClassId> labels = {0, 1, 2, 0, 1, 2};
  const std::vector<NodeId> nodes = {0, 1, 2, 3};
  MlpClassifier m(x, 3, toy_config());
  auto f = [&](ParameterStore&, bool with_grad) {
    Matrix d;
    const double loss = mean_cross_entropy(m.logits(true, 2), nodes, labels, with_grad ? &d : nullptr);
    if (with_grad) m.backward(d);
    return loss;
  };
  EXPECT_LT(grad_check(m.params(), f, 200, 5).max_rel_error, 1e-4);
}

TEST(EvaluateTest, CountsAndTies) {
  const Matrix logits(4, 2, std::vector<double>{1, 0, 0, 1, 2, 1, 0.5, 0.5});
  const std::vector<ClassId> labels = {0, 1, 1, 0};
  const std::vector<NodeId> all = {0, 1, 2, 3};
  EXPECT_DOUBLE_EQ(evaluate(logits, labels, all), 0.75);
  EXPECT_DOUBLE_EQ(evaluate(logits, labels, std::vector<NodeId>{0, 1, 3}), 1.0);
  EXPECT_THROW(evaluate(logits, labels, std::vector<NodeId>{}), std::invalid_argument);
}

/// Twelve nodes, three classes, one-hot class feature plus noise columns;
/// communities and clusters follow the classes.
struct Separable {
  Matrix x{12, 5};
  std::vector<ClassId> labels;
  NeighborhoodMap groups;
  Matrix z;
  Split split{{0, 1, 2, 3, 4, 5, 6, 7, 8}, {9, 10}, {11}, 0};
  Separable() {
    Rng rng(3);
    for (std::size_t u = 0; u < 12; ++u) {
      labels.push_back(static_cast<ClassId>(u % 3));
      x(u, u % 3) = 1.0;
      x(u, 3) = uniform01(rng);
      x(u, 4) = uniform01(rng);
    }
    groups.lists.resize(12);
    for (NodeId u = 0; u < 12; ++u)
      for (NodeId v = 0; v < 12; ++v)
        if (u % 3 == v % 3) groups.lists[static_cast<std::size_t>(u)].push_back(v);
    z = random_matrix(12, 4, 8);
  }
};

TEST(TrainClassifierTest, FitsSeparableToyGraph) {
  const Separable s;
  TrainConfig cfg = toy_config();
  cfg.hidden_dim = 16;
  cfg.max_epochs = 500;
  cfg.patience = 500;
  LnlModel m(s.x, s.z, &s.groups, &s.groups, AggregationMode::kBiLevel, 3, cfg);
  const TrainResult r = train_classifier(m, s.labels, s.split, cfg);
  EXPECT_LT(*std::min_element(r.train_loss.begin(), r.train_loss.end()), 0.05);
  EXPECT_DOUBLE_EQ(r.best_val_accuracy, 1.0);
}

TEST(TrainClassifierTest, PatienceSemanticsAndDeterminism) {
  const Separable s;
  TrainConfig cfg = toy_config();
  cfg.max_epochs = 400;
  cfg.patience = 7;
  LnlModel a(s.x, s.z, &s.groups, &s.groups, AggregationMode::kBiLevel, 3, cfg);
  const TrainResult r = train_classifier(a, s.labels, s.split, cfg);
  ASSERT_LT(r.epochs_run, cfg.max_epochs);
  EXPECT_EQ(r.epochs_run, r.best_epoch + 1 + cfg.patience);
  LnlModel b(s.x, s.z, &s.groups, &s.groups, AggregationMode::kBiLevel, 3, cfg);
  const TrainResult r2 = train_classifier(b, s.labels, s.split, cfg);
  EXPECT_EQ(r.best_val_accuracy, r2.best_val_accuracy);
  EXPECT_EQ(r.train_loss, r2.train_loss);
  EXPECT_EQ(a.logits(false, 0), b.logits(false, 0));
}

TEST(TrainClassifierTest, RestoresBestSnapshot) {
  const Separable s;
  TrainConfig cfg = toy_config();
  cfg.max_epochs = 60;
  cfg.patience = 60;
  cfg.learning_rate = 0.5;  // large steps make validation accuracy move around
  MlpClassifier m(s.x, 3, cfg);
  const TrainResult r = train_classifier(m, s.labels, s.split, cfg);
  EXPECT_DOUBLE_EQ(evaluate(m.logits(false, 0), s.labels, s.split.val), r.best_val_accuracy);
  EXPECT_THROW(train_classifier(m, s.labels, Split{}, cfg), std::invalid_argument);
}

}  // namespace
}  // namespace lnl

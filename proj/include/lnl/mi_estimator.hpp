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

// Self-embedding MLP and the pairwise mutual-information estimator.
//
// The estimator scores a node pair with a symmetrised bilinear logit
//   l(u, v) = 1/2 (z_u' W z_v + z_v' W z_u) + b
// and is trained as a binary classifier of same-label vs different-label
// pairs. Its pairwise MI value is the logit itself: for a single pair the
// softplus difference sp(l) - sp(-l) collapses to l exactly.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "lnl/graph.hpp"
#include "lnl/numerics.hpp"
#include "lnl/tensor.hpp"

namespace lnl {

enum class EmbeddingSource { kRaw, kMean1Hop };

inline const char* to_string(EmbeddingSource s) {
  return s == EmbeddingSource::kRaw ? "raw" : "mean1hop";
}

struct SelfEmbeddings {
  Matrix z;
  EmbeddingSource source = EmbeddingSource::kRaw;
};

/// Parameter names inside EstimatorParams::store.
namespace est {
inline const std::string kW1 = "se.w1";
inline const std::string kB1 = "se.b1";
inline const std::string kW2 = "se.w2";
inline const std::string kB2 = "se.b2";
inline const std::string kBilinear = "mie.w";
inline const std::string kBias = "mie.b";
}  // namespace est

struct EstimatorParams {
  ParameterStore store;

  [[nodiscard]] int se_dim() const { return static_cast<int>(store.value(est::kW2).cols()); }
  [[nodiscard]] int input_dim() const { return static_cast<int>(store.value(est::kW1).rows()); }
  [[nodiscard]] const Matrix& bilinear() const { return store.value(est::kBilinear); }
  [[nodiscard]] double bias() const { return store.value(est::kBias)(0, 0); }
};

inline EstimatorParams init_estimator(int input_dim, const TrainConfig& cfg, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0xe57));
  EstimatorParams p;
  const auto in = static_cast<std::size_t>(input_dim);
  const auto hid = static_cast<std::size_t>(cfg.hidden_dim);
  const auto se = static_cast<std::size_t>(cfg.se_dim);
  p.store.add(est::kW1, glorot_uniform(in, hid, rng));
  p.store.add(est::kB1, Matrix(1, hid));
  p.store.add(est::kW2, glorot_uniform(hid, se, rng));
  p.store.add(est::kB2, Matrix(1, se));
  p.store.add(est::kBilinear, glorot_uniform(se, se, rng));
  p.store.add(est::kBias, Matrix(1, 1));
  return p;
}

// ---------------------------------------------------------------------------
// Self-embedding MLP: Z = SELU(SELU(X W1 + b1) W2 + b2).

struct MlpTrace {
  Matrix pre1, h1, mask, pre2, z;
};

/// Forward pass; a non-empty `mask` applies dropout to the hidden layer.
inline MlpTrace mlp_forward(const Matrix& x, const ParameterStore& s, Matrix mask = {}) {
  MlpTrace t;
  t.pre1 = linear(x, s.value(est::kW1), s.value(est::kB1));
  t.h1 = selu(t.pre1);
  if (!mask.empty()) t.h1 = hadamard(t.h1, mask);
  t.mask = std::move(mask);
  t.pre2 = linear(t.h1, s.value(est::kW2), s.value(est::kB2));
  t.z = selu(t.pre2);
  return t;
}

inline void mlp_backward(const Matrix& x, const MlpTrace& t, const Matrix& dz, ParameterStore& s) {
  const Matrix dpre2 = backprop_elementwise(t.pre2, dz, [](double v) { return selu_grad(v); });
  Matrix dh1 = linear_backward(t.h1, s.value(est::kW2), dpre2, s.grad(est::kW2), &s.grad(est::kB2));
  if (!t.mask.empty()) dh1 = hadamard(dh1, t.mask);
  const Matrix dpre1 = backprop_elementwise(t.pre1, dh1, [](double v) { return selu_grad(v); });
  linear_backward(x, s.value(est::kW1), dpre1, s.grad(est::kW1), &s.grad(est::kB1), false);
}

/// Evaluation-mode embeddings (no dropout).
inline SelfEmbeddings self_embed(const Matrix& features, const EstimatorParams& params,
                                 EmbeddingSource source = EmbeddingSource::kRaw) {
  if (static_cast<int>(features.cols()) != params.input_dim()) {
    throw std::invalid_argument("self_embed: feature dim " + std::to_string(features.cols()) +
                                " != estimator input dim " + std::to_string(params.input_dim()));
  }
  return {mlp_forward(features, params.store).z, source};
}

// ---------------------------------------------------------------------------
// Scoring.

/// Symmetrised bilinear logit between two embedding vectors.
inline double bilinear_logit(std::span<const double> a, std::span<const double> b, const Matrix& w,
                             double bias) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto wi = w.row(i);
    double ab = 0.0;
    for (std::size_t j = 0; j < b.size(); ++j) ab += wi[j] * b[j];
    s += a[i] * ab;
    double ba = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) ba += wi[j] * a[j];
    s += b[i] * ba;
  }
  return 0.5 * s + bias;
}

inline double pairwise_mi(std::span<const double> zu, std::span<const double> zv,
                          const EstimatorParams& p) {
  return bilinear_logit(zu, zv, p.bilinear(), p.bias());
}

/// MI value of a node pair: the symmetrised logit.
inline double pairwise_mi(NodeId u, NodeId v, const Matrix& z, const EstimatorParams& p) {
  return pairwise_mi(z.row(static_cast<std::size_t>(u)), z.row(static_cast<std::size_t>(v)), p);
}

/// Estimator output in (0, 1).
inline double mi_score(NodeId u, NodeId v, const Matrix& z, const EstimatorParams& p) {
  return sigmoid(pairwise_mi(u, v, z, p));
}

/// S = (W + W') / 2, so that l(u, v) = z_u' S z_v + b.
inline Matrix symmetric_part(const Matrix& w) {
  Matrix s(w.rows(), w.cols());
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j) s(i, j) = 0.5 * (w(i, j) + w(j, i));
  return s;
}

// ---------------------------------------------------------------------------
// Pair sampling.

struct PairBatch {
  std::vector<NodeId> anchors;
  std::vector<NodeId> partners;
  std::vector<std::uint8_t> positive;

  [[nodiscard]] std::size_t size() const { return anchors.size(); }
  [[nodiscard]] bool empty() const { return anchors.empty(); }
  friend bool operator==(const PairBatch&, const PairBatch&) = default;
};

/// For each anchor in `labeled`, `per_anchor` same-label partners and
/// `per_anchor` different-label partners, without replacement when the pool
/// allows it and with replacement otherwise. `labels` is indexed by node id.
inline PairBatch sample_pairs(std::span<const NodeId> labeled, std::span<const ClassId> labels,
                              int per_anchor, std::uint64_t seed) {
  if (per_anchor < 1) throw std::invalid_argument("sample_pairs: per_anchor must be >= 1");
  // Pool ordered by label so that each class is one contiguous range.
  std::vector<NodeId> pool(labeled.begin(), labeled.end());
  std::stable_sort(pool.begin(), pool.end(), [&](NodeId a, NodeId b) {
    return labels[static_cast<std::size_t>(a)] < labels[static_cast<std::size_t>(b)];
  });
  struct Range {
    std::size_t begin, end;
  };
  std::vector<std::pair<ClassId, Range>> ranges;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const ClassId c = labels[static_cast<std::size_t>(pool[i])];
    if (c == kUnlabeled) throw std::invalid_argument("sample_pairs: unlabeled node in pool");
    if (ranges.empty() || ranges.back().first != c) ranges.push_back({c, {i, i}});
    ranges.back().second.end = i + 1;
  }
  if (ranges.size() < 2) throw std::invalid_argument("sample_pairs: need at least two classes");
  auto range_of = [&](ClassId c) {
    for (const auto& [cls, r] : ranges)
      if (cls == c) return r;
    return Range{0, 0};
  };

  const auto k = static_cast<std::size_t>(per_anchor);
  // Draws k indices from [0, m): distinct when m >= k.
  auto draw = [k](std::size_t m, Rng& rng) {
    std::vector<std::size_t> out;
    out.reserve(k);
    if (m >= k) {
      std::unordered_set<std::size_t> taken;
      while (out.size() < k) {
        const auto i = uniform_index(rng, m);
        if (taken.insert(i).second) out.push_back(i);
      }
    } else {
      for (std::size_t j = 0; j < k; ++j) out.push_back(uniform_index(rng, m));
    }
    return out;
  };

  PairBatch batch;
  Rng rng(seed);
  for (NodeId a : labeled) {
    const Range r = range_of(labels[static_cast<std::size_t>(a)]);
    const std::size_t own = static_cast<std::size_t>(
        std::find(pool.begin() + static_cast<std::ptrdiff_t>(r.begin),
                  pool.begin() + static_cast<std::ptrdiff_t>(r.end), a) -
        pool.begin());
    const std::size_t same = r.end - r.begin - 1;  // peers, anchor excluded
    if (same > 0) {
      for (std::size_t i : draw(same, rng)) {
        std::size_t pos = r.begin + i;
        if (pos >= own) ++pos;
        batch.anchors.push_back(a);
        batch.partners.push_back(pool[pos]);
        batch.positive.push_back(1);
      }
    }
    const std::size_t other = pool.size() - (r.end - r.begin);
    for (std::size_t i : draw(other, rng)) {
      const std::size_t pos = i < r.begin ? i : i + (r.end - r.begin);
      batch.anchors.push_back(a);
      batch.partners.push_back(pool[pos]);
      batch.positive.push_back(0);
    }
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Estimation loss.

/// Mean binary cross-entropy of the estimator over the batch.
inline double estimation_loss(const PairBatch& batch, const Matrix& z, const EstimatorParams& p) {
  if (batch.empty()) throw std::invalid_argument("estimation_loss: empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double l = pairwise_mi(batch.anchors[i], batch.partners[i], z, p);
    total += batch.positive[i] ? softplus(-l) : softplus(l);
  }
  return total / static_cast<double>(batch.size());
}

/// Loss plus gradients: accumulates into the bilinear weight and bias grads of
/// `store` and returns dLoss/dZ.
inline double estimation_loss_backward(const PairBatch& batch, const Matrix& z, ParameterStore& store,
                                       Matrix& dz) {
  if (batch.empty()) throw std::invalid_argument("estimation_loss: empty batch");
  const Matrix& w = store.value(est::kBilinear);
  const double bias = store.value(est::kBias)(0, 0);
  Matrix& dw = store.grad(est::kBilinear);
  double& db = store.grad(est::kBias)(0, 0);
  const Matrix s = symmetric_part(w);
  const Matrix sz = matmul(z, s);  // row u holds S z_u
  dz = Matrix(z.rows(), z.cols());
  const double inv = 1.0 / static_cast<double>(batch.size());
  // dW = 1/2 (A + A') with A = sum_i g_i z_u z_v' = Z' M, M_u = sum_{i: u} g_i z_v.
  Matrix m(z.rows(), z.cols());
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto u = static_cast<std::size_t>(batch.anchors[i]);
    const auto v = static_cast<std::size_t>(batch.partners[i]);
    const double l = dot(z.row(u), sz.row(v)) + bias;
    const bool pos = batch.positive[i] != 0;
    total += pos ? softplus(-l) : softplus(l);
    const double g = inv * (sigmoid(l) - (pos ? 1.0 : 0.0));
    axpy(g, sz.row(v), dz.row(u));
    axpy(g, sz.row(u), dz.row(v));
    axpy(g, z.row(v), m.row(u));
    db += g;
  }
  const Matrix a = matmul_tn(z, m);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) dw(i, j) += 0.5 * (a(i, j) + a(j, i));
  return total * inv;
}

// ---------------------------------------------------------------------------
// Centroids and pseudo-labels.

/// Row c is the mean embedding of the labeled nodes of class c.
inline Matrix class_centroids(const Matrix& z, std::span<const NodeId> labeled,
                              std::span<const ClassId> labels, int class_count) {
  Matrix centroids(static_cast<std::size_t>(class_count), z.cols());
  std::vector<std::size_t> counts(static_cast<std::size_t>(class_count), 0);
  for (NodeId u : labeled) {
    const auto c = static_cast<std::size_t>(labels[static_cast<std::size_t>(u)]);
    axpy(1.0, z.row(static_cast<std::size_t>(u)), centroids.row(c));
    ++counts[c];
  }
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) throw std::invalid_argument("class_centroids: class " + std::to_string(c) + " is empty");
    for (double& v : centroids.row(c)) v /= static_cast<double>(counts[c]);
  }
  return centroids;
}

struct PseudoLabel {
  ClassId label = kUnlabeled;
  double confidence = 0.0;
};

/// Class whose centroid has the highest MI with u; ties go to the lower id.
inline PseudoLabel pseudo_label(NodeId u, const Matrix& centroids, const Matrix& z,
                                const EstimatorParams& p) {
  PseudoLabel best{kUnlabeled, -std::numeric_limits<double>::infinity()};
  for (std::size_t c = 0; c < centroids.rows(); ++c) {
    const double mi = pairwise_mi(z.row(static_cast<std::size_t>(u)), centroids.row(c), p);
    if (mi > best.confidence) best = {static_cast<ClassId>(c), mi};
  }
  return best;
}

// ---------------------------------------------------------------------------
// Training.

namespace detail {
inline constexpr std::uint64_t kPairTag = 0x9a125;
inline constexpr std::uint64_t kEstDropoutTag = 0xd0e57;
}  // namespace detail

/// One epoch index -> one pair batch and one dropout mask, both seeded from
/// (cfg.seed, epoch), so epochs are reproducible independently of history.
/// Only rows touched by the batch go through the MLP.
inline double estimator_epoch(EstimatorParams& params, const Matrix& x, std::span<const NodeId> pool,
                              std::span<const ClassId> pool_labels, const TrainConfig& cfg,
                              std::uint64_t epoch) {
  PairBatch batch =
      sample_pairs(pool, pool_labels, cfg.pairs_per_anchor, derive_seed(cfg.seed, detail::kPairTag, epoch));

  std::vector<NodeId> rows;
  rows.reserve(batch.size() * 2);
  rows.insert(rows.end(), batch.anchors.begin(), batch.anchors.end());
  rows.insert(rows.end(), batch.partners.begin(), batch.partners.end());
  std::sort(rows.begin(), rows.end());
  rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
  std::vector<NodeId> local(x.rows(), -1);
  for (std::size_t i = 0; i < rows.size(); ++i) local[static_cast<std::size_t>(rows[i])] = static_cast<NodeId>(i);
  for (auto& a : batch.anchors) a = local[static_cast<std::size_t>(a)];
  for (auto& b : batch.partners) b = local[static_cast<std::size_t>(b)];

  Matrix xs(rows.size(), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = x.row(static_cast<std::size_t>(rows[i]));
    std::copy(src.begin(), src.end(), xs.row(i).begin());
  }

  Rng drop_rng(derive_seed(cfg.seed, detail::kEstDropoutTag, epoch));
  Matrix mask = dropout_mask(rows.size(), static_cast<std::size_t>(cfg.hidden_dim), cfg.dropout, drop_rng);
  const MlpTrace trace = mlp_forward(xs, params.store, std::move(mask));
  Matrix dz;
  const double loss = estimation_loss_backward(batch, trace.z, params.store, dz);
  mlp_backward(xs, trace, dz, params.store);
  sgd_momentum_step(params.store, cfg);
  return loss;
}

/// Runs `epochs` estimator epochs numbered from `first_epoch`.
inline double train_estimator(EstimatorParams& params, const Matrix& x, std::span<const NodeId> pool,
                              std::span<const ClassId> pool_labels, const TrainConfig& cfg,
                              std::uint64_t first_epoch, int epochs) {
  double loss = std::numeric_limits<double>::quiet_NaN();
  for (int e = 0; e < epochs; ++e) {
    loss = estimator_epoch(params, x, pool, pool_labels, cfg, first_epoch + static_cast<std::uint64_t>(e));
  }
  return loss;
}

struct M3sResult {
  EstimatorParams params;
  SelfEmbeddings embeddings;
  /// Labeled pool size after warm-up, then after each stage's selection.
  std::vector<std::size_t> pool_sizes;
  /// Nodes in the pool with their (true or pseudo) labels, in insertion order.
  std::vector<NodeId> pool;
  std::vector<ClassId> pool_labels;  // indexed by node id, kUnlabeled outside the pool
  double final_loss = 0.0;
};

inline int m3s_top_t(const TrainConfig& cfg, int node_count) {
  if (cfg.m3s_top_t > 0) return cfg.m3s_top_t;
  return static_cast<int>(std::ceil(0.05 * static_cast<double>(node_count)));
}

/// Multi-stage self-supervised sampling. Warm-up on the true labels of
/// `train`, then per stage: class centroids over the pool, pseudo-label every
/// node outside the pool, move the t most confident into the pool (labels
/// frozen from then on), retrain. Pseudo-labels never leave this function
/// except through the returned pool bookkeeping.
inline M3sResult m3s_train(const Matrix& x, std::span<const ClassId> true_labels, int class_count,
                           std::span<const NodeId> train, const TrainConfig& cfg,
                           EmbeddingSource source = EmbeddingSource::kRaw) {
  cfg.validate();
  const auto n = x.rows();
  M3sResult r{init_estimator(static_cast<int>(x.cols()), cfg, cfg.seed), {}, {}, {}, {}, 0.0};
  r.pool_labels.assign(n, kUnlabeled);
  for (NodeId u : train) {
    const ClassId c = true_labels[static_cast<std::size_t>(u)];
    if (c == kUnlabeled) throw std::invalid_argument("m3s_train: unlabeled node in train split");
    r.pool.push_back(u);
    r.pool_labels[static_cast<std::size_t>(u)] = c;
  }

  std::uint64_t epoch = 0;
  r.final_loss = train_estimator(r.params, x, r.pool, r.pool_labels, cfg, epoch, cfg.m3s_warmup_epochs);
  epoch += static_cast<std::uint64_t>(cfg.m3s_warmup_epochs);
  r.pool_sizes.push_back(r.pool.size());

  const int t = m3s_top_t(cfg, static_cast<int>(n));
  for (int stage = 0; stage < cfg.m3s_stages; ++stage) {
    if (r.pool.size() < n) {
      const Matrix z = self_embed(x, r.params).z;
      const Matrix centroids = class_centroids(z, r.pool, r.pool_labels, class_count);
      struct Candidate {
        NodeId node;
        PseudoLabel pl;
      };
      std::vector<Candidate> cands;
      for (NodeId u = 0; u < static_cast<NodeId>(n); ++u) {
        if (r.pool_labels[static_cast<std::size_t>(u)] != kUnlabeled) continue;
        cands.push_back({u, pseudo_label(u, centroids, z, r.params)});
      }
      std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
        return a.pl.confidence > b.pl.confidence;
      });
      const auto take = std::min(cands.size(), static_cast<std::size_t>(t));
      for (std::size_t i = 0; i < take; ++i) {
        r.pool.push_back(cands[i].node);
        r.pool_labels[static_cast<std::size_t>(cands[i].node)] = cands[i].pl.label;
      }
    }
    r.pool_sizes.push_back(r.pool.size());
    r.final_loss = train_estimator(r.params, x, r.pool, r.pool_labels, cfg, epoch, cfg.m3s_stage_epochs);
    epoch += static_cast<std::uint64_t>(cfg.m3s_stage_epochs);
  }
  r.embeddings = self_embed(x, r.params, source);
  return r;
}

// ---------------------------------------------------------------------------
// Persistence.
//
// Text layout:
//   <se_dim> <node_count>
//   param <name> <rows> <cols>     followed by <rows> lines of <cols> reals
//   ...
//   embeddings <source> <rows> <cols>   followed by the Z rows
// Reals are written with 17 significant digits and round-trip exactly.

namespace detail {
inline void write_matrix_rows(std::ostream& out, const Matrix& m) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (c) out << ' ';
      out << m(r, c);
    }
    out << '\n';
  }
}
inline Matrix read_matrix_rows(std::istream& in, std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  for (double& v : m.data()) {
    if (!(in >> v)) throw std::runtime_error("estimator file: truncated matrix");
  }
  return m;
}
}  // namespace detail

inline void save_estimator(const std::filesystem::path& path, const EstimatorParams& p,
                           const SelfEmbeddings& se) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(17);
  out << p.se_dim() << ' ' << se.z.rows() << '\n';
  for (const auto& [name, param] : p.store) {
    out << "param " << name << ' ' << param.value.rows() << ' ' << param.value.cols() << '\n';
    detail::write_matrix_rows(out, param.value);
  }
  out << "embeddings " << to_string(se.source) << ' ' << se.z.rows() << ' ' << se.z.cols() << '\n';
  detail::write_matrix_rows(out, se.z);
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline std::pair<EstimatorParams, SelfEmbeddings> load_estimator(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::size_t se_dim = 0, node_count = 0;
  if (!(in >> se_dim >> node_count)) throw std::runtime_error("estimator file: bad header");
  EstimatorParams p;
  SelfEmbeddings se;
  std::string tag;
  while (in >> tag) {
    if (tag == "param") {
      std::string name;
      std::size_t rows = 0, cols = 0;
      in >> name >> rows >> cols;
      p.store.add(name, detail::read_matrix_rows(in, rows, cols));
    } else if (tag == "embeddings") {
      std::string src;
      std::size_t rows = 0, cols = 0;
      in >> src >> rows >> cols;
      se.source = src == "mean1hop" ? EmbeddingSource::kMean1Hop : EmbeddingSource::kRaw;
      se.z = detail::read_matrix_rows(in, rows, cols);
    } else {
      throw std::runtime_error("estimator file: unexpected token '" + tag + "'");
    }
  }
  for (const auto* name : {&est::kW1, &est::kB1, &est::kW2, &est::kB2, &est::kBilinear, &est::kBias}) {
    if (!p.store.contains(*name)) throw std::runtime_error("estimator file: missing " + *name);
  }
  if (static_cast<std::size_t>(p.se_dim()) != se_dim || se.z.rows() != node_count) {
    throw std::runtime_error("estimator file: header does not match contents");
  }
  return {std::move(p), std::move(se)};
}

}  // namespace lnl
